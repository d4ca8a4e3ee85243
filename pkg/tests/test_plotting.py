from pathlib import Path

import matplotlib
import pytest

from ferls.errors import ParseError
from ferls.plotting import plot_csv, read_csv

GOLDEN = Path(__file__).parent / "golden"


def test_golden_svg(tmp_path):
    made_with = (GOLDEN / "matplotlib_version.txt").read_text().strip()
    if matplotlib.__version__ != made_with:
        pytest.skip(f"golden SVG was rendered with matplotlib {made_with}")
    out = plot_csv(GOLDEN / "stream_small.csv", tmp_path / "s.svg")
    assert out.read_bytes() == (GOLDEN / "stream_small.svg").read_bytes()


def test_plot_is_byte_stable(tmp_path):
    a = plot_csv(GOLDEN / "stream_small.csv", tmp_path / "a.svg").read_bytes()
    b = plot_csv(GOLDEN / "stream_small.csv", tmp_path / "b.svg").read_bytes()
    assert a == b


def test_empty_csv(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("")
    with pytest.raises(ParseError):
        plot_csv(p, tmp_path / "e.svg")
    p.write_text("t,model,seed,start,one_step,kstep,trace_p\n")
    with pytest.raises(ParseError):
        plot_csv(p, tmp_path / "e.svg")


def test_ragged_row(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("t,one_step\n0.0,1.0\n0.1\n")
    with pytest.raises(ParseError) as err:
        read_csv(p)
    assert err.value.line == 3


def test_unknown_schema(tmp_path):
    p = tmp_path / "u.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ParseError):
        plot_csv(p, tmp_path / "u.svg")


def test_single_row_stream(tmp_path):
    p = tmp_path / "one.csv"
    p.write_text("t,model,seed,start,one_step,kstep,trace_p\n0.0,node,0,0,0.5,,\n")
    assert plot_csv(p, tmp_path / "one.svg").stat().st_size > 0


def test_single_row_autonomy(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("t,model,seed,x_0,x_1,x_2,x_3,x_4,u_0,u_1,cost,alpha_1\n"
                 "0.0,fe-rls,0,0.0,0.0,0.0,0.0,0.0,0.5,0.1,6.0,0.0\n")
    assert plot_csv(p, tmp_path / "a.svg").stat().st_size > 0
