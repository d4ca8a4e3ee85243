"""Command-line experiment drivers.

    ferls gen-data    --config run.toml
    ferls train       --config run.toml --model fe
    ferls eval-stream --config run.toml --model fe-rls
    ferls autonomy    --config run.toml --model node --schedule 0:1.0,2:0.0
    ferls plot        runs/x/stream_fe-rls.csv --out fig.svg
    ferls bench-rls   --out runs/bench

Exit status: 0 success, 1 configuration error, 2 runtime failure.
"""
import argparse
import csv
import io
import sys
import time
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import experiments as ex
from . import fe, mppi, rls
from .baselines import MamlConfig, NodeConfig, load_model, train_maml, train_node
from .dataset import TerrainDataset, load_dataset, save_dataset
from .envs import TerrainSchedule, generate_dataset, make_env
from .errors import FerlsError, InvalidConfig

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
TRAINABLE = ("fe", "node", "maml")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "" if np.isnan(v) else repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(buf.getvalue())


def _out(cfg):
    return Path(cfg["experiment"]["out"])


def _env(cfg, schedule=None):
    exp = cfg["experiment"]
    try:
        return make_env(exp["env"], schedule if schedule is not None else exp["schedule"], exp["dt"])
    except ValueError as exc:
        raise InvalidConfig(str(exc)) from None


def _checkpoint_path(cfg, name):
    p = cfg["checkpoints"][name]
    return Path(p) if p else _out(cfg) / f"{name}.json"


def _load_checkpoint(cfg, name):
    p = _checkpoint_path(cfg, name)
    if not p.is_file():
        raise InvalidConfig(f"checkpoint not found: {p} (run `ferls train --model {name}` first)")
    return load_model(p)


# ---------------------------------------------------------------- verbs

def cmd_gen_data(cfg, args):
    d = cfg["data"]
    out = _out(cfg) / "data"
    paths = []
    for i, w in enumerate(config_mod.worlds(cfg)):
        env = _env(cfg, w)
        ds = generate_dataset(env, d["duration"], seed=d["seed"] + i,
                              episode_length=d["episode_length"] or None)
        path = out / f"{env.name}_{w:.4g}.jsonl"
        save_dataset(ds, path)
        paths.append(path)
        print(f"wrote {path} ({len(ds)} transitions)")
    return paths


def _datasets(cfg):
    listed = cfg["data"]["datasets"]
    paths = [Path(p) for p in listed] if listed else sorted((_out(cfg) / "data").glob("*.jsonl"))
    if not paths:
        raise InvalidConfig("no datasets: set data.datasets or run `ferls gen-data` first")
    missing = [str(p) for p in paths if not p.is_file()]
    if missing:
        raise InvalidConfig(f"dataset not found: {', '.join(missing)}")
    return [load_dataset(p) for p in paths]


def _train_cfg(cls, table, seed):
    kw = {k: (tuple(v) if k == "hidden" else v) for k, v in table.items()
          if k in cls.__dataclass_fields__}
    if seed is not None:
        kw["seed"] = seed
    return cls(**kw)


def cmd_train(cfg, args):
    names = TRAINABLE if args.model in (None, "all") else (args.model,)
    if any(n not in TRAINABLE for n in names):
        raise InvalidConfig(f"--model for train must be one of {TRAINABLE} or 'all'")
    data = _datasets(cfg)
    out = []
    for name in names:
        t0 = time.perf_counter()
        if name == "fe":
            model = fe.train(data, _train_cfg(fe.FeTrainConfig, cfg["fe"], args.seed))
        elif name == "node":
            model = train_node(data, _train_cfg(NodeConfig, cfg["node"], args.seed))
        else:
            model = train_maml(data, _train_cfg(MamlConfig, cfg["maml"], args.seed))
        path = _checkpoint_path(cfg, name)
        path.parent.mkdir(parents=True, exist_ok=True)
        model.save(path)
        write_csv(path.with_suffix(".loss.csv"), ["epoch", "loss"], enumerate(model.loss_trace))
        print(f"trained {name} in {time.perf_counter() - t0:.1f} s -> {path}")
        out.append(path)
    return out


def _adapter(cfg, kind):
    if kind not in ex.MODEL_KINDS:
        raise InvalidConfig(f"--model must be one of {ex.MODEL_KINDS}")
    if kind in ("fe-rls", "fe-batch"):
        model = _load_checkpoint(cfg, "fe")
    else:
        model = _load_checkpoint(cfg, kind)
    r = cfg["rls"]
    m = cfg["maml"]
    try:
        return ex.make_adapter(kind, model, rls.RlsConfig(r["lam"], r["gamma"], r["q"]),
                               buffer_size=m["buffer_size"], inner_steps=m["eval_inner_steps"])
    except TypeError as exc:
        raise InvalidConfig(str(exc)) from None


def _seeds(cfg, args):
    return [args.seed] if args.seed is not None else list(cfg["experiment"]["seeds"])


def cmd_eval_stream(cfg, args):
    kind = args.model or cfg["experiment"]["model"]
    adapter = _adapter(cfg, kind)
    env = _env(cfg)
    s = cfg["stream"]
    k = getattr(getattr(adapter, "bs", None), "k", 0)
    header = ["t", "model", "seed", "start", "one_step", "kstep", "trace_p"]
    header += [f"alpha_{j + 1}" for j in range(k)]
    rows, batch_one, batch_k, times = [], [], [], None
    for seed in _seeds(cfg, args):
        for j in range(s["starts"]):
            stream = ex.record_stream(env, s["duration"], seed=seed * 1000 + j)
            if kind == "fe-batch":
                data = TerrainDataset.from_transitions(stream.transitions(env))
                adapter.alpha = fe.batch_fit(adapter.bs, data, cfg["fe"]["lam"])
            res = ex.eval_stream(env, adapter, stream, s["horizon"], s["kstep"])
            times = res["t"]
            batch_one.append(res["one_step"])
            batch_k.append(res["kstep"])
            alphas = res["alpha"]
            for i, t in enumerate(res["t"]):
                a = list(alphas[i]) if alphas is not None else []
                if kind == "fe-batch":
                    a = list(adapter.alpha)
                tp = res["trace_p"][i]
                rows.append([t, kind, seed, j, res["one_step"][i], res["kstep"][i],
                             None if np.isnan(tp) else tp, *a])
    out = _out(cfg)
    path = out / f"stream_{kind}.csv"
    write_csv(path, header, rows)
    qrows = []
    for name, vals in (("one_step", batch_one), ("kstep", batch_k)):
        _, q = ex.quantile_bands(times, np.array(vals))
        qrows += [[t, name, q[0, i], q[1, i], q[2, i]] for i, t in enumerate(times)]
    write_csv(out / f"stream_{kind}_quantiles.csv", ["t", "metric", "q10", "median", "q90"], qrows)
    print(f"wrote {path} ({len(rows)} rows)")
    return path


def cmd_autonomy(cfg, args):
    if cfg["experiment"]["env"] != "terrain":
        raise InvalidConfig("autonomy needs experiment.env = 'terrain'")
    kind = args.model or cfg["experiment"]["model"]
    adapter = _adapter(cfg, kind)
    env = _env(cfg)
    mc = cfg["mppi"]
    mcfg = mppi.MppiConfig(horizon=mc["horizon"], dt=env.dt, num_rollouts=mc["num_rollouts"],
                           sigma=mc["sigma"], temperature=mc["temperature"],
                           control_cost=mc["control_cost"], smoothing_window=mc["smoothing_window"],
                           u_min=env.u_low, u_max=env.u_high)
    a = cfg["autonomy"]
    course = ex.make_course(a["course"])
    k = getattr(getattr(adapter, "bs", None), "k", 0)
    header = ["t", "model", "seed"] + [f"x_{i}" for i in range(env.n)]
    header += [f"u_{i}" for i in range(env.m)] + ["cost"] + [f"alpha_{j + 1}" for j in range(k)]
    rows, summaries = [], []
    for seed in _seeds(cfg, args):
        try:
            traj, summ = ex.run_autonomy(env, adapter, course, mcfg, seed, a["duration"],
                                         stop_at_goal=a["stop_at_goal"])
        except Exception as exc:  # one bad episode must not sink the batch
            traj = []
            summ = ex.EpisodeSummary(seed, kind, 0, False, float("inf"), 0, True,
                                     f"{type(exc).__name__}: {exc}")
        rows += [[r[0], kind, seed, *r[1:]] for r in traj]
        summaries.append(summ)
        if summ.failed:
            print(f"seed {seed}: episode failed ({summ.reason})", file=sys.stderr)
    out = _out(cfg)
    path = out / f"autonomy_{kind}.csv"
    write_csv(path, header, rows)
    write_csv(out / f"autonomy_{kind}_summary.csv",
              ["seed", "model", "collisions", "reached", "cost", "steps", "failed", "reason"],
              [[s.seed, s.model, s.collisions, s.reached, s.cost, s.steps, s.failed, s.reason]
               for s in summaries])
    costs = [s.cost for s in summaries]
    print(f"wrote {path}; mean cost {np.mean(costs):.2f}, "
          f"mean collisions {np.mean([s.collisions for s in summaries]):.2f}")
    return path


def cmd_plot(cfg, args):
    from .plotting import plot_csv
    if not args.csv:
        raise InvalidConfig("plot needs a metrics CSV path")
    src = Path(args.csv)
    if not src.is_file():
        raise InvalidConfig(f"CSV not found: {src}")
    dest = Path(args.out) if args.out else src.with_suffix(".svg")
    plot_csv(src, dest)
    print(f"wrote {dest}")
    return dest


def cmd_bench_rls(cfg, args):
    from .bench import bench_rls
    b = cfg["bench"]
    rows = bench_rls(b["ks"], b["n"], b["updates"], b["lengths"], seed=args.seed or 0)
    header = ["kind", "k", "stream_length", "seconds_per_update"]
    out = Path(args.out) if args.out else None
    if out is not None:
        write_csv(out / "bench_rls.csv", header, rows)
    for r in rows:
        print(f"{r[0]:>12}  k={r[1]:<3d} T={r[2]:<6d} {r[3] * 1e6:9.2f} us/update")
    return rows


VERBS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval-stream": cmd_eval_stream,
    "autonomy": cmd_autonomy,
    "plot": cmd_plot,
    "bench-rls": cmd_bench_rls,
}


def build_parser():
    p = argparse.ArgumentParser(prog="ferls", description="Online function-encoder adaptation experiments")
    p.add_argument("verb", choices=sorted(VERBS))
    p.add_argument("csv", nargs="?", help="metrics CSV (plot only)")
    p.add_argument("--config", help="TOML experiment config")
    p.add_argument("--seed", type=int, help="run a single seed instead of experiment.seeds")
    p.add_argument("--out", help="output directory (output file for plot)")
    p.add_argument("--model", help="fe | node | maml | all (train); fe-rls | fe-batch | node | maml")
    p.add_argument("--schedule", help='world schedule, e.g. "0:1.0,20:0.0"')
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        if args.schedule is not None:
            try:
                TerrainSchedule.parse(args.schedule)
            except ValueError as exc:
                raise InvalidConfig(str(exc)) from None
        overrides = {}
        if args.out and args.verb != "plot":
            overrides["experiment.out"] = args.out
        if args.schedule is not None:
            overrides["experiment.schedule"] = args.schedule
        cfg = config_mod.load(args.config, overrides)
        if args.verb not in ("plot", "bench-rls"):
            config_mod.dump(cfg, _out(cfg) / f"{args.verb}.resolved.toml")
        VERBS[args.verb](cfg, args)
    except InvalidConfig as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FerlsError, ArithmeticError, np.linalg.LinAlgError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
