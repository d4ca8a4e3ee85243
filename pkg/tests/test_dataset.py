import numpy as np
import pytest

from ferls.dataset import TerrainDataset, Transition, load_dataset, save_dataset
from ferls.envs import VehicleEnv, generate_dataset
from ferls.errors import InsufficientData, ParseError, ShapeMismatch


def test_round_trip_bit_exact(tmp_path):
    ds = generate_dataset(VehicleEnv("0:1.0,1:0.0"), 2.0, seed=0)
    ds.x[0, 3] = 0.1 + 0.2  # a value without a short decimal form
    path = save_dataset(ds, tmp_path / "sub" / "d.jsonl")
    back = load_dataset(path)
    assert back == ds
    assert back.x[0, 3] == 0.1 + 0.2


def test_empty_file(tmp_path):
    p = tmp_path / "e.jsonl"
    p.write_text("")
    with pytest.raises(InsufficientData):
        load_dataset(p)


def test_truncated_line(tmp_path):
    ds = TerrainDataset("w", np.zeros((3, 2)), np.zeros((3, 1)), 0.1, np.ones((3, 2)))
    p = save_dataset(ds, tmp_path / "d.jsonl")
    lines = p.read_text().splitlines()
    lines[1] = lines[1][:20]
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError) as err:
        load_dataset(p)
    assert err.value.line == 2


def test_inconsistent_dims(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text('{"world_id": "a", "x": [0, 1], "v": [0], "dt": 0.1, "x_next": [1, 1]}\n'
                 '{"world_id": "a", "x": [0], "v": [0], "dt": 0.1, "x_next": [1]}\n')
    with pytest.raises(ParseError) as err:
        load_dataset(p)
    assert err.value.line == 2


def test_dataset_validation():
    with pytest.raises(InsufficientData):
        TerrainDataset("w", np.zeros((0, 2)), np.zeros((0, 1)), 0.1, np.zeros((0, 2)))
    with pytest.raises(ShapeMismatch):
        TerrainDataset("w", np.zeros((2, 2)), np.zeros((2, 1)), 0.1, np.zeros((2, 3)))
    with pytest.raises(ValueError):
        TerrainDataset("w", np.zeros((2, 2)), np.zeros((2, 1)), 0.0, np.zeros((2, 2)))


def test_transitions_and_subset():
    trs = [Transition(np.full(2, i), np.zeros(1), 0.1, np.full(2, i + 1.0), "w") for i in range(4)]
    ds = TerrainDataset.from_transitions(trs)
    assert ds.world_id == "w" and len(ds) == 4 and ds.worlds is None
    np.testing.assert_array_equal(ds[2].y, [1.0, 1.0])
    sub = ds.subset([0, 3])
    np.testing.assert_array_equal(sub.x[:, 0], [0.0, 3.0])
    mixed = TerrainDataset.from_transitions(trs[:1] + [Transition(np.zeros(2), np.zeros(1), 0.1, np.zeros(2), "v")])
    assert mixed.world_id == "mixed" and mixed.worlds == ["w", "v"]
