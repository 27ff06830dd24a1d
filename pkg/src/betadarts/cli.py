"""Command-line entry point: ``betadarts {gen-bench,search,eval,analyze}``.

Exit codes: 0 ok, 2 configuration or input error, 3 space larger than the
enumeration cap, 4 numeric divergence during search.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .analysis import stats_record
from .bench import TrainerConfig, generate_benchmark, load_table, trajectory_eval
from .datasets import make_dataset
from .search import DivergenceError, SearchConfig, search
from .space import DEFAULT_ENUM_CAP, DEFAULT_OPS, OpKind, SpaceSpec, SpaceTooLarge, build_space, decode

EXIT_OK, EXIT_CONFIG, EXIT_CAP, EXIT_DIVERGED = 0, 2, 3, 4
OUT_ENV = "BETADARTS_OUT"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Everything a search run needs; the resolved copy is saved as config.json."""

    nodes: int = 3
    ops: str = "zero,skip,meanpool,linrelu"
    width: int = 8
    dataset: str = "rings"
    n: int = 8192
    classes: int = 2
    noise: float = 0.3
    data_seed: int = 0
    offset: float = 0.0
    bench: str | None = None
    epochs: int = 50
    batch_size: int = 64
    alpha_lr: float = 3e-4
    alpha_optimizer: str = "adam"
    alpha_beta1: float = 0.5
    alpha_beta2: float = 0.999
    alpha_eps: float = 1e-8
    w_lr: float = 0.025
    w_momentum: float = 0.9
    reg: str = "none"
    lam: float = 0.0
    schedule: str = "linear_up"
    lambda_start: float = 0.0
    lambda_end: float = 50.0
    printed_zero: bool = False
    seed: int = 0

    def search_config(self) -> SearchConfig:
        names = {f.name for f in fields(SearchConfig)}
        return SearchConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def space(self) -> SpaceSpec:
        return build_space(self.nodes, parse_ops(self.ops), self.width)


RUN_FIELDS = {f.name: f for f in fields(RunConfig)}


def parse_ops(text: str) -> list[OpKind]:
    """``"zero,skip"`` or a count ``"5"`` meaning the first N default ops."""
    text = str(text).strip()
    if text.isdigit():
        k = int(text)
        if not 1 <= k <= len(DEFAULT_OPS):
            raise ConfigError(f"op count must be in [1, {len(DEFAULT_OPS)}], got {k}")
        return list(DEFAULT_OPS[:k])
    return [OpKind.parse(t) for t in text.split(",") if t.strip()]


def _coerce(name: str, value):
    kind = RUN_FIELDS[name].type
    if value is None:
        return None
    try:
        if kind == "int":
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if kind == "float":
            return float(value)
        if kind == "bool":
            if isinstance(value, str):
                return value.lower() in ("1", "true", "yes")
            return bool(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: cannot use {value!r}") from None


def resolve_config(path: str | None, overrides: dict) -> RunConfig:
    """Defaults, then the JSON file, then command-line flags."""
    values = {}
    if path:
        try:
            loaded = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        unknown = sorted(set(loaded) - set(RUN_FIELDS))
        if unknown:
            raise ConfigError(f"{path}: unknown keys {unknown}")
        values.update(loaded)
    values.update({k: v for k, v in overrides.items() if v is not None})
    cfg = RunConfig(**{k: _coerce(k, v) for k, v in values.items()})
    try:
        cfg.search_config()
        cfg.space()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def output_root(arg: str | None) -> Path:
    return Path(arg or os.environ.get(OUT_ENV) or "runs")


def parse_seeds(text: str) -> list[int]:
    """``"3"`` means seeds 0..2; ``"0,4,7"`` lists them."""
    text = str(text).strip()
    try:
        if "," in text:
            return [int(t) for t in text.split(",") if t.strip()]
        return list(range(int(text)))
    except ValueError:
        raise ConfigError(f"bad seed list {text!r}") from None


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


# gen-bench ---------------------------------------------------------------


def cmd_gen_bench(args) -> int:
    space = build_space(args.nodes, parse_ops(args.ops), args.width)
    if space.size > args.cap:
        raise SpaceTooLarge(space.size, args.cap)
    seeds = parse_seeds(args.seeds)
    if not seeds:
        raise ConfigError("need at least one seed")
    ds = make_dataset(args.dataset, args.n, args.width, args.classes, args.noise, args.data_seed, args.offset)
    trainer = TrainerConfig(epochs=args.trainer_epochs,
                            milestones=(args.trainer_epochs // 2, 3 * args.trainer_epochs // 4))
    table = generate_benchmark(space, ds, trainer, seeds, cap=args.cap, jobs=args.jobs)
    out = Path(args.out)
    _write(out, table.dumps())
    best = table.best()
    print(f"wrote {len(table)} entries to {out}; best {best.genotype} test_acc {best.test_acc_mean:.4f}")
    return EXIT_OK


# search ------------------------------------------------------------------


def run_search(cfg: RunConfig, out_dir: Path) -> tuple[str, dict | None]:
    """One search run; writes its files into ``out_dir``."""
    table = None
    if cfg.bench:
        # the table fixes both the space and the dataset; echo what was used
        table = load_table(cfg.bench)
        sd, dd = table.space.to_dict(), table.header["dataset"]
        cfg = replace(cfg, nodes=sd["num_nodes"], ops=",".join(sd["ops"]), width=sd["width"], dataset=dd["kind"],
                      n=dd["n"], classes=dd["classes"], noise=dd["noise"], data_seed=dd["seed"],
                      offset=dd.get("offset", 0.0))
    space = cfg.space()
    ds = make_dataset(cfg.dataset, cfg.n, cfg.width, cfg.classes, cfg.noise, cfg.data_seed, cfg.offset)
    traj = search(space, ds, cfg.search_config())
    _write(out_dir / "trajectory.csv", traj.to_csv())
    _write(out_dir / "alphas.jsonl", traj.alphas_jsonl())
    _write(out_dir / "genotype.txt", str(traj.final_genotype) + "\n")
    _write(out_dir / "config.json", json.dumps(asdict(cfg), indent=2, sort_keys=True) + "\n")
    metrics = None
    if table is not None:
        metrics = trajectory_eval(table, traj).final
    return str(traj.final_genotype), metrics


def _search_job(item):
    cfg, out_dir = item
    return run_search(cfg, out_dir)


def cmd_search(args) -> int:
    overrides = {k: getattr(args, k, None) for k in RUN_FIELDS}
    cfg = resolve_config(args.config, overrides)
    if cfg.bench and not Path(cfg.bench).exists():
        raise ConfigError(f"benchmark file {cfg.bench} not found; create it with 'betadarts gen-bench'")
    root = output_root(args.out)
    if args.seeds is None:
        jobs = [(cfg, root)]
    else:
        jobs = [(RunConfig(**{**asdict(cfg), "seed": s}), root / f"seed_{s}") for s in parse_seeds(args.seeds)]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_search_job, jobs))
    else:
        results = [_search_job(j) for j in jobs]
    for (c, out_dir), (genotype, metrics) in zip(jobs, results):
        line = f"seed {c.seed}: {genotype} -> {out_dir}"
        if metrics is not None:
            line += f" | test_acc {metrics['test_acc']:.4f} regret {metrics['regret']:.4f}"
        print(line)
    return EXIT_OK


# eval --------------------------------------------------------------------


def read_trajectory(path: Path) -> list[tuple[int, str]]:
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError(f"trajectory file {path} not found") from None
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or "epoch" not in rows[0] or "genotype" not in rows[0]:
        raise ConfigError(f"{path}:1: missing epoch/genotype header")
    ei, gi = rows[0].index("epoch"), rows[0].index("genotype")
    out = []
    for n, row in enumerate(rows[1:], start=2):
        try:
            out.append((int(row[ei]), row[gi]))
        except (IndexError, ValueError):
            raise ConfigError(f"{path}:{n}: bad trajectory row") from None
    return out


def _run_path(p: str) -> Path:
    path = Path(p)
    return path / "trajectory.csv" if path.is_dir() else path


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std())


def svg_lines(series: dict[str, tuple[Sequence[float], Sequence[float]]], title: str, ylabel: str,
              width: int = 640, height: int = 400) -> str:
    """Minimal standalone SVG line chart, one polyline per series."""
    pad = 50
    xs = np.concatenate([np.asarray(x, float) for x, _ in series.values()])
    ys = np.concatenate([np.asarray(y, float) for _, y in series.values()])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1

    def px(x, y):
        return (pad + (x - x0) / (x1 - x0) * (width - 2 * pad),
                height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad))

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width / 2}" y="20" text-anchor="middle">{title}</text>',
             f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
             f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle">epoch</text>',
             f'<text x="12" y="{height / 2}" transform="rotate(-90 12 {height / 2})" '
             f'text-anchor="middle">{ylabel}</text>',
             f'<text x="{pad - 4}" y="{height - pad}" text-anchor="end" font-size="10">{y0:.4g}</text>',
             f'<text x="{pad - 4}" y="{pad}" text-anchor="end" font-size="10">{y1:.4g}</text>']
    for i, (name, (x, y)) in enumerate(series.items()):
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in (px(float(u), float(v)) for u, v in zip(x, y)))
        color = colors[i % len(colors)]
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        parts.append(f'<text x="{width - pad + 4}" y="{pad + 14 * i}" font-size="10" fill="{color}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_eval(args) -> int:
    if not Path(args.bench).exists():
        raise ConfigError(f"benchmark file {args.bench} not found; create it with 'betadarts gen-bench'")
    table = load_table(args.bench)
    evals = {}
    for run in args.runs:
        path = _run_path(run)
        cfg_path = path.parent / "config.json"
        if cfg_path.exists():
            saved = json.loads(cfg_path.read_text())
            space = build_space(saved["nodes"], parse_ops(saved["ops"]), saved["width"])
            if space != table.space:
                raise ConfigError(f"{run}: search space does not match benchmark {args.bench}")
        pairs = read_trajectory(path)
        for epoch, g in pairs:
            try:
                decode(g, table.space)
            except ValueError as exc:
                raise ConfigError(f"{path}: epoch {epoch}: {exc}") from None
        evals[run] = trajectory_eval(table, pairs)

    out = sys.stdout
    if len(evals) == 1:
        ev = next(iter(evals.values()))
        print("epoch  genotype                      val_acc   test_acc  regret", file=out)
        for i, e in enumerate(ev.epochs):
            print(f"{e:5d}  {ev.genotypes[i]:28s}  {ev.val_acc[i]:.6f}  {ev.test_acc[i]:.6f}  {ev.regret[i]:.6f}",
                  file=out)
    print(f"table best test_acc {table.best().test_acc_mean:.6f} ({table.best().genotype})", file=out)
    for run, ev in evals.items():
        f = ev.final
        print(f"{run}: final {f['genotype']} test_acc {f['test_acc']:.6f} regret {f['regret']:.6f} "
              f"first-optimum epoch {ev.first_optimum_epoch}", file=out)
    if len(evals) > 1:
        for label, pick in [("test_acc", lambda ev: ev.final["test_acc"]), ("regret", lambda ev: ev.final["regret"]),
                            ("first_optimum_epoch", lambda ev: ev.first_optimum_epoch)]:
            m, s = _mean_std([pick(ev) for ev in evals.values()])
            print(f"aggregate {label}: {m:.6f} +- {s:.6f} over {len(evals)} runs", file=out)

    if args.csv:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["run", "epoch", "genotype", "val_acc", "test_acc", "regret"])
        for run, ev in evals.items():
            for i, e in enumerate(ev.epochs):
                w.writerow([run, e, ev.genotypes[i], ev.val_acc[i], ev.test_acc[i], ev.regret[i]])
        _write(Path(args.csv), buf.getvalue())
    if args.svg:
        series = {Path(run).name or run: (ev.epochs, ev.test_acc) for run, ev in evals.items()}
        _write(Path(args.svg), svg_lines(series, "ground-truth test accuracy", "test_acc"))
    return EXIT_OK


# analyze -----------------------------------------------------------------

STATS_COLUMNS = ("run", "epoch", "alpha_mean", "alpha_median", "alpha_std", "beta_total_std", "lipschitz_sum", "phi")


def read_alphas(path: Path, space: SpaceSpec) -> list[tuple[int, np.ndarray]]:
    try:
        lines = path.read_text().splitlines()
    except FileNotFoundError:
        raise ConfigError(f"snapshot file {path} not found") from None
    out = []
    shape = (space.num_edges, space.num_ops)
    for n, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            alpha = np.asarray(rec["alpha"], dtype=float)
            epoch = int(rec["epoch"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            raise ConfigError(f"{path}:{n}: expected {{\"epoch\": int, \"alpha\": [[...]]}}") from None
        if alpha.shape != shape:
            raise ConfigError(f"{path}:{n}: alpha shape {alpha.shape} != {shape}")
        out.append((epoch, alpha))
    if not out:
        raise ConfigError(f"{path}: no snapshots")
    return out


def _space_for(run: Path, args) -> SpaceSpec:
    cfg_path = run.parent / "config.json" if run.is_file() else run / "config.json"
    if args.nodes is not None:
        return build_space(args.nodes, parse_ops(args.ops), args.width)
    if cfg_path.exists():
        saved = json.loads(cfg_path.read_text())
        return build_space(saved["nodes"], parse_ops(saved["ops"]), saved["width"])
    raise ConfigError(f"{run}: no config.json beside the snapshots; pass --nodes/--ops/--width")


def cmd_analyze(args) -> int:
    rows = []
    curves = {}
    for run in args.runs:
        path = Path(run)
        snap = path / "alphas.jsonl" if path.is_dir() else path
        space = _space_for(path, args)
        xs, ys = [], []
        for epoch, alpha in read_alphas(snap, space):
            rec = stats_record(alpha, space)
            rows.append([run, epoch, rec.alpha_mean, rec.alpha_median, rec.alpha_std, rec.beta_total_std,
                         rec.lipschitz_sum, rec.phi])
            xs.append(epoch)
            ys.append(rec.alpha_std)
        curves[path.name or run] = (xs, ys)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STATS_COLUMNS)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    if args.csv:
        _write(Path(args.csv), buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    for name, (xs, ys) in curves.items():
        print(f"{name}: alpha_std {ys[0]:.6f} -> {ys[-1]:.6f} over {len(xs)} snapshots", file=sys.stderr)
    if args.svg:
        _write(Path(args.svg), svg_lines(curves, "alpha std", "alpha_std"))
    return EXIT_OK


# parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="betadarts", description="Desk-scale beta-decay architecture search.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-bench", help="train every genotype and write a benchmark table")
    g.add_argument("--nodes", type=int, default=3)
    g.add_argument("--ops", default="zero,skip,meanpool,linrelu", help="comma list or a count of default ops")
    g.add_argument("--width", type=int, default=8)
    g.add_argument("--dataset", default="rings")
    g.add_argument("--n", type=int, default=8192)
    g.add_argument("--classes", type=int, default=2)
    g.add_argument("--noise", type=float, default=0.3)
    g.add_argument("--data-seed", type=int, default=0)
    g.add_argument("--offset", type=float, default=0.0)
    g.add_argument("--seeds", default="2", help="count (0..N-1) or comma list of trainer seeds")
    g.add_argument("--trainer-epochs", type=int, default=200)
    g.add_argument("--cap", type=int, default=DEFAULT_ENUM_CAP)
    g.add_argument("--jobs", type=int, default=1)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_bench)

    s = sub.add_parser("search", help="run one or more searches")
    s.add_argument("--config", help="JSON file with RunConfig keys")
    s.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./runs)")
    s.add_argument("--seeds", help="run several seeds into seed_N subdirectories")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--lambda", dest="lam", help="coefficient for l2 / weight_decay")
    for name, f in RUN_FIELDS.items():
        if name == "lam":
            continue
        flag = "--" + name.replace("_", "-")
        if f.type == "bool":
            s.add_argument(flag, dest=name, action="store_const", const=True, default=None)
        else:
            s.add_argument(flag, dest=name, default=None)
    s.set_defaults(func=cmd_search)

    e = sub.add_parser("eval", help="score trajectories against a benchmark table")
    e.add_argument("runs", nargs="+", help="run directories or trajectory.csv files")
    e.add_argument("--bench", required=True)
    e.add_argument("--csv")
    e.add_argument("--svg")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("analyze", help="alpha statistics per epoch from snapshot files")
    a.add_argument("runs", nargs="+", help="run directories or alphas.jsonl files")
    a.add_argument("--nodes", type=int)
    a.add_argument("--ops", default="zero,skip,meanpool,linrelu")
    a.add_argument("--width", type=int, default=8)
    a.add_argument("--csv")
    a.add_argument("--svg")
    a.set_defaults(func=cmd_analyze)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SpaceTooLarge as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAP
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
