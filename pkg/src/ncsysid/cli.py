"""Command-line front end and experiment harness.

Subcommands: ``simulate`` (model -> trajectory CSV), ``identify`` (CSV ->
result JSON), ``grid`` (noise-std grid of identification experiments),
``csv-run`` (subsampled external series, identification vs AR baseline)
and ``scaling`` (relaxation size / solve time versus window length).
Outputs are plot-ready CSV/JSON files; plotting is out of scope.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import npa
from .lds import LdsModel, Trajectory, hazan_model, simulate
from .sysid import LsFormulationConfig, ar_ols_baseline, build_noise_explicit, identify

__all__ = [
    "ExperimentSpec",
    "cell_seed",
    "run_grid",
    "run_csv",
    "run_scaling",
    "write_table",
    "read_table",
    "main",
]

GRID_COLUMNS = ("std_w", "std_v", "seed", "nrmse", "lower_bound", "flat", "seconds", "status")


@dataclass
class ExperimentSpec:
    """A grid experiment: one LDS, a noise-std grid, and solver settings."""

    model: LdsModel
    std_grid: list[tuple[float, float]]
    repeats: int = 1
    T: int = 20
    subsample_stride: int = 1
    cfg: LsFormulationConfig = field(default_factory=lambda: LsFormulationConfig(T=20))
    base_seed: int = 0
    tol: float = 1e-6
    jobs: int = 1

    def __post_init__(self):
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.subsample_stride < 1:
            raise ValueError("stride must be >= 1")
        if not self.std_grid:
            raise ValueError("empty noise grid")


def cell_seed(base_seed: int, std_w: float, std_v: float, repeat: int) -> int:
    """Deterministic per-cell seed: base XOR crc32("std_w|std_v|repeat").

    Documented so any single grid cell can be re-run in isolation.
    """
    tag = f"{std_w:.9g}|{std_v:.9g}|{repeat}"
    return (base_seed ^ zlib.crc32(tag.encode())) & 0x7FFFFFFF


def _noisy_model(model: LdsModel, std_w: float, std_v: float) -> LdsModel:
    n = model.state_dim
    return LdsModel(G=model.G, F=model.F, W=(std_w ** 2) * np.eye(n),
                    v=np.array([[std_v ** 2]]), m0=model.m0, C0=model.C0)


def _grid_cell(payload: dict) -> dict:
    """One simulate -> identify run; failures are captured, never raised."""
    std_w, std_v, repeat = payload["std_w"], payload["std_v"], payload["repeat"]
    seed = cell_seed(payload["base_seed"], std_w, std_v, repeat)
    row = {"std_w": std_w, "std_v": std_v, "seed": seed, "nrmse": "",
           "lower_bound": "", "flat": "", "seconds": "", "status": "ok"}
    started = time.perf_counter()
    try:
        model = _noisy_model(LdsModel.from_json(payload["model_json"]), std_w, std_v)
        traj = simulate(model, payload["T"], seed=seed)
        cfg = LsFormulationConfig(**payload["cfg"])
        result = identify(traj.scalar, cfg, tol=payload["tol"])
        row.update(nrmse=repr(result.nrmse_fit),
                   lower_bound=repr(result.lower_bound),
                   flat=str(result.extraction.flat),
                   status=result.solver_status if result.solver_status != "optimal" else "ok")
    except Exception as exc:  # per-cell failures must not abort the grid
        row["status"] = f"error: {type(exc).__name__}"
    row["seconds"] = repr(time.perf_counter() - started)
    return row


def _cfg_payload(cfg: LsFormulationConfig) -> dict:
    return {"T": cfg.T, "c1": cfg.c1, "c2": cfg.c2, "order": cfg.order,
            "ball_radius": cfg.ball_radius, "archimedean": cfg.archimedean,
            "equality_mode": cfg.equality_mode, "sparsity": cfg.sparsity}


def run_grid(spec: ExperimentSpec) -> tuple[list[dict], dict]:
    """Run every (std_w, std_v, repeat) cell; returns (rows, per-cell summary).

    Rows are sorted by (std_w, std_v, repeat-seed) so emission is
    deterministic regardless of worker scheduling.
    """
    payloads = [{"std_w": w, "std_v": v, "repeat": r, "base_seed": spec.base_seed,
                 "model_json": spec.model.to_json(), "T": spec.T,
                 "cfg": _cfg_payload(spec.cfg), "tol": spec.tol}
                for (w, v) in spec.std_grid for r in range(spec.repeats)]
    if spec.jobs > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            rows = list(pool.map(_grid_cell, payloads))
    else:
        rows = [_grid_cell(p) for p in payloads]
    rows.sort(key=lambda r: (r["std_w"], r["std_v"], r["seed"]))

    summary: dict[str, dict] = {}
    for (w, v) in spec.std_grid:
        vals = [float(r["nrmse"]) for r in rows
                if r["std_w"] == w and r["std_v"] == v and r["nrmse"] != ""]
        key = f"{w:.9g},{v:.9g}"
        if vals:
            arr = np.array(vals)
            summary[key] = {"mean": float(arr.mean()),
                            "std": float(arr.std(ddof=1)) if len(arr) > 1 else 0.0,
                            "count": len(arr)}
        else:
            summary[key] = {"mean": None, "std": None, "count": 0}
    return rows, summary


def run_csv(path: str, stride: int, count: int, cfg: LsFormulationConfig,
            tol: float = 1e-6, ar_order: int = 1) -> dict:
    """Subsample an external series and fit both methods on it.

    Takes every ``stride``-th observation until ``count`` values are
    collected, then runs the identification pipeline and the AR(s)
    baseline on the same window.  The AR score is computed over the
    range where its one-step forecast is defined (t > s); the first s
    emitted slots hold the series mean as a placeholder.
    """
    traj = Trajectory.load_csv(path)
    y = traj.scalar
    if count * stride > len(y):
        raise ValueError(f"need count*stride = {count * stride} rows, file has {len(y)}")
    sub = y[::stride][:count]
    run_cfg = LsFormulationConfig(**{**_cfg_payload(cfg), "T": count})
    result = identify(sub, run_cfg, tol=tol)
    baseline = ar_ols_baseline(sub, ar_order)
    from .lds import nrmse
    return {
        "periods": count,
        "stride": stride,
        "y": [float(x) for x in sub],
        "forecast_identify": [float(x) for x in result.forecasts],
        "forecast_ar": [float(x) for x in baseline.forecasts],
        "nrmse_identify": result.nrmse_fit,
        "nrmse_ar": nrmse(sub[ar_order:], baseline.forecasts[ar_order:]),
        "ar_order": ar_order,
        "lower_bound": result.lower_bound,
        "flat": result.extraction.flat,
    }


def run_scaling(T_list: list[int], cfg: LsFormulationConfig, tol: float = 1e-6,
                repetitions: int = 3, time_limit: float | None = None,
                base_seed: int = 0) -> list[dict]:
    """Relaxation size and solve time as a function of the window length.

    For each T, builds the relaxation in dense and clique mode, records
    the moment-variable count, and times the solve ``repetitions`` times
    (mean and sample std).  A per-T time limit is recorded in the status
    column rather than raised.
    """
    rows = []
    model = hazan_model(0.5, 0.5)
    for T in T_list:
        if T < 2:
            raise ValueError("each window length must be >= 2")
        traj = simulate(model, T, seed=base_seed)
        for mode in ("dense", "cliques"):
            run_cfg = LsFormulationConfig(**{**_cfg_payload(cfg), "T": T, "sparsity": mode})
            problem = build_noise_explicit(traj.scalar, run_cfg)
            rel = npa.build_relaxation(problem, run_cfg.order)
            sdp_problem = npa.relaxation_to_sdp(rel)
            times = []
            status = "ok"
            for _ in range(repetitions):
                started = time.perf_counter()
                sol_status = None
                try:
                    from . import sdp as sdp_mod
                    sol = sdp_mod.solve(sdp_problem, tol=tol, time_limit=time_limit)
                    sol_status = sol.status
                except Exception as exc:
                    status = f"error: {type(exc).__name__}"
                times.append(time.perf_counter() - started)
                if sol_status and sol_status != "optimal":
                    status = sol_status
            arr = np.array(times)
            rows.append({
                "T": T, "mode": mode,
                "moment_vars": rel.num_classes - 1,
                "largest_block": max(len(b.basis) for b in rel.moment_blocks),
                "mean_seconds": float(arr.mean()),
                "std_seconds": float(arr.std(ddof=1)) if len(arr) > 1 else 0.0,
                "status": status,
            })
    return rows


# ---------------------------------------------------------------------------
# Table I/O: emitted CSVs round-trip exactly (floats via repr).
# ---------------------------------------------------------------------------

def write_table(path: str, columns: tuple[str, ...], rows: list[dict]):
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(str(row[c]) for c in columns) + "\n")


def read_table(path: str) -> tuple[tuple[str, ...], list[dict]]:
    with open(path) as fh:
        columns = tuple(fh.readline().strip().split(","))
        rows = []
        for ln in fh:
            if not ln.strip():
                continue
            parts = ln.rstrip("\n").split(",")
            if len(parts) != len(columns):
                raise ValueError(f"{path}: row with {len(parts)} fields, expected {len(columns)}")
            rows.append(dict(zip(columns, parts)))
    return columns, rows


# ---------------------------------------------------------------------------
# Argument parsing.
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(1)


def _add_cfg_flags(p: argparse.ArgumentParser):
    p.add_argument("--T", type=int, default=20, help="window length")
    p.add_argument("--order", type=int, default=1, help="relaxation order k")
    p.add_argument("--c1", type=float, default=None, help="process-noise penalty")
    p.add_argument("--c2", type=float, default=None, help="observation-noise penalty")
    p.add_argument("--ball-radius", type=float, default=None, help="operator norm bound")
    p.add_argument("--equality-mode", choices=["exact_rows", "inequality_pairs"],
                   default="exact_rows")
    p.add_argument("--sparsity", choices=["dense", "cliques"], default="dense")
    p.add_argument("--tol", type=float, default=1e-6, help="SDP solver tolerance")


def _cfg_from_args(args, T: int | None = None) -> LsFormulationConfig:
    return LsFormulationConfig(
        T=T if T is not None else args.T, c1=args.c1, c2=args.c2, order=args.order,
        ball_radius=args.ball_radius, equality_mode=args.equality_mode,
        sparsity=args.sparsity)


def _load_model(path: str | None) -> LdsModel:
    if path is None:
        return hazan_model()
    with open(path) as fh:
        return LdsModel.from_json(fh.read())


def _outdir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _float_list(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ncsysid",
                     description="System identification via operator moment relaxations")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a trajectory to CSV")
    p.add_argument("--model", default=None, help="model JSON (default: built-in 2-d example)")
    p.add_argument("--T", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--std-w", type=float, default=None, help="override process-noise std")
    p.add_argument("--std-v", type=float, default=None, help="override observation-noise std")
    p.add_argument("--out", default=".")

    p = sub.add_parser("identify", help="identify a system from a t,y CSV")
    p.add_argument("data", help="trajectory CSV with header t,y")
    _add_cfg_flags(p)
    p.add_argument("--out", default=".")

    p = sub.add_parser("grid", help="noise-std grid of experiments")
    p.add_argument("--config", default=None, help="experiment spec JSON")
    p.add_argument("--model", default=None)
    _add_cfg_flags(p)
    p.add_argument("--std-w", default="0.1,0.5,1.0", help="comma list of process-noise stds")
    p.add_argument("--std-v", default="0.1,0.5,1.0", help="comma list of observation-noise stds")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", default=".")

    p = sub.add_parser("csv-run", help="identify vs AR baseline on an external CSV")
    p.add_argument("data")
    p.add_argument("--stride", type=int, default=4)
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--ar-order", type=int, default=1)
    _add_cfg_flags(p)
    p.add_argument("--out", default=".")

    p = sub.add_parser("scaling", help="relaxation size/time vs window length")
    p.add_argument("--T-list", default="2,4,6,8")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--time-limit", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    _add_cfg_flags(p)
    p.add_argument("--out", default=".")

    return parser


def _spec_from_args(args) -> ExperimentSpec:
    overrides = {}
    if args.config:
        with open(args.config) as fh:
            overrides = json.load(fh)
    model = _load_model(args.model) if not overrides.get("model") \
        else LdsModel.from_json(json.dumps(overrides["model"]))
    if "std_grid" in overrides:
        grid = [tuple(map(float, pair)) for pair in overrides["std_grid"]]
    else:
        grid = [(w, v) for w in _float_list(args.std_w) for v in _float_list(args.std_v)]
    T = int(overrides.get("T", args.T))
    cfg_fields = {**_cfg_payload(_cfg_from_args(args, T=T)), **overrides.get("cfg", {})}
    cfg_fields["T"] = T
    return ExperimentSpec(
        model=model,
        std_grid=grid,
        repeats=int(overrides.get("repeats", args.repeats)),
        T=T,
        subsample_stride=int(overrides.get("subsample_stride", 1)),
        cfg=LsFormulationConfig(**cfg_fields),
        base_seed=int(overrides.get("base_seed", args.seed)),
        tol=float(overrides.get("tol", args.tol)),
        jobs=int(overrides.get("jobs", args.jobs)),
    )


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            model = _load_model(args.model)
            if args.std_w is not None or args.std_v is not None:
                model = _noisy_model(model, args.std_w or 0.0, args.std_v or 0.0)
            traj = simulate(model, args.T, seed=args.seed)
            out = _outdir(args)
            traj.save_csv(os.path.join(out, "trajectory.csv"))
            print(os.path.join(out, "trajectory.csv"))

        elif args.command == "identify":
            y = Trajectory.load_csv(args.data).scalar
            result = identify(y, _cfg_from_args(args), tol=args.tol)
            out = _outdir(args)
            path = os.path.join(out, "result.json")
            with open(path, "w") as fh:
                fh.write(result.to_json() + "\n")
            print(f"nrmse={result.nrmse_fit:.4f} lower_bound={result.lower_bound:.6g} "
                  f"flat={result.extraction.flat}")
            print(path)

        elif args.command == "grid":
            spec = _spec_from_args(args)
            rows, summary = run_grid(spec)
            out = _outdir(args)
            write_table(os.path.join(out, "grid_results.csv"), GRID_COLUMNS, rows)
            with open(os.path.join(out, "grid_summary.json"), "w") as fh:
                json.dump(summary, fh, indent=2)
                fh.write("\n")
            print(os.path.join(out, "grid_results.csv"))

        elif args.command == "csv-run":
            report = run_csv(args.data, args.stride, args.count,
                             _cfg_from_args(args, T=args.count),
                             tol=args.tol, ar_order=args.ar_order)
            out = _outdir(args)
            rows = [{"t": i + 1, "y": repr(report["y"][i]),
                     "f_identify": repr(report["forecast_identify"][i]),
                     "f_ar": repr(report["forecast_ar"][i])}
                    for i in range(report["periods"])]
            write_table(os.path.join(out, "csv_run_forecasts.csv"),
                        ("t", "y", "f_identify", "f_ar"), rows)
            with open(os.path.join(out, "csv_run_report.json"), "w") as fh:
                json.dump({k: v for k, v in report.items() if not k.startswith("forecast")},
                          fh, indent=2)
                fh.write("\n")
            print(f"identify {100 * report['nrmse_identify']:.1f}% vs "
                  f"AR({report['ar_order']}) {100 * report['nrmse_ar']:.1f}%")

        elif args.command == "scaling":
            rows = run_scaling(_int_list(args.T_list), _cfg_from_args(args),
                               tol=args.tol, repetitions=args.repeats,
                               time_limit=args.time_limit, base_seed=args.seed)
            out = _outdir(args)
            cols = ("T", "mode", "moment_vars", "largest_block",
                    "mean_seconds", "std_seconds", "status")
            write_table(os.path.join(out, "scaling.csv"), cols,
                        [{k: str(r[k]) for k in cols} for r in rows])
            for r in rows:
                print(f"T={r['T']:>3} {r['mode']:<7} vars={r['moment_vars']:>6} "
                      f"time={r['mean_seconds']:.3f}s ± {r['std_seconds']:.3f}")

        return 0
    except (ValueError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
