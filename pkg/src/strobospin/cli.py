"""Command-line interface: plan files, sweep execution, tables, snapshots."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .dynamics import DriveParams, Evolver
from .experiments import (
    SCALAR_OBSERVABLES,
    ScalarStat,
    SweepAxis,
    SweepPlan,
    SweepResult,
    run_sweep,
)
from .lattice import LatticeSpec, build_kernel
from .state import Purpose, RngStream, SpinConfig, init_polarized_noisy, write_spin_csv

THREADS_ENV = "STROBOSPIN_THREADS"


class PlanError(ValueError):
    """A plan file failed to parse or validate; message carries field paths."""


# ---- plan files ---------------------------------------------------------------

_PLAN_INT_FIELDS = {"D", "L", "n_periods", "M", "subharmonic_n", "R", "master_seed", "per_decade"}
_PLAN_FLOAT_FIELDS = {"g", "h", "W", "T", "omega", "delta", "alpha"}
_PLAN_KEYS = _PLAN_INT_FIELDS | _PLAN_FLOAT_FIELDS | {
    "axes",
    "observables",
    "field_path",
    "early_stop",
}
_REQUIRED_KEYS = ("D", "L", "g", "h", "W")


def _parse_alpha(value, path):
    if isinstance(value, str):
        if value.lower() in ("inf", "infinity"):
            return math.inf
        raise PlanError(f"{path}: expected a number or 'inf', got {value!r}")
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    raise PlanError(f"{path}: expected a number or 'inf', got {value!r}")


def _parse_number(value, path):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    raise PlanError(f"{path}: expected a number, got {value!r}")


def _parse_int(value, path):
    if isinstance(value, int) and not isinstance(value, bool):
        return value
    raise PlanError(f"{path}: expected an integer, got {value!r}")


def plan_from_dict(raw: dict) -> SweepPlan:
    """Build and validate a SweepPlan from plain JSON data."""
    if not isinstance(raw, dict):
        raise PlanError(f"plan: expected an object, got {type(raw).__name__}")
    unknown = sorted(set(raw) - _PLAN_KEYS)
    if unknown:
        raise PlanError(f"plan: unknown keys {unknown}; allowed: {sorted(_PLAN_KEYS)}")
    axis_names = set()
    if "axes" in raw:
        if not isinstance(raw["axes"], list):
            raise PlanError("axes: expected a list of {name, values} objects")
        for i, entry in enumerate(raw["axes"]):
            if isinstance(entry, dict):
                axis_names.add(entry.get("name"))
    missing = [k for k in _REQUIRED_KEYS if k not in raw]
    if missing:
        raise PlanError(f"plan: missing required keys {missing}")
    if "alpha" not in raw and "alpha" not in axis_names:
        raise PlanError("plan: missing required keys ['alpha']")
    if ("T" not in raw and "omega" not in raw) and not ({"T", "omega"} & axis_names):
        raise PlanError("plan: one of T or omega is required")

    kwargs: dict = {}
    for key, value in raw.items():
        if key == "alpha":
            kwargs["alpha"] = _parse_alpha(value, "alpha")
        elif key in _PLAN_INT_FIELDS:
            kwargs[key] = _parse_int(value, key)
        elif key in _PLAN_FLOAT_FIELDS:
            kwargs[key] = _parse_number(value, key)
        elif key == "field_path":
            if value not in ("auto", "fft", "direct"):
                raise PlanError(f"field_path: expected auto|fft|direct, got {value!r}")
            kwargs[key] = value
        elif key == "early_stop":
            if not isinstance(value, bool):
                raise PlanError(f"early_stop: expected true/false, got {value!r}")
            kwargs[key] = value
        elif key == "observables":
            if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
                raise PlanError("observables: expected a list of names")
            kwargs[key] = tuple(value)
        elif key == "axes":
            axes = []
            for i, entry in enumerate(value):
                if not isinstance(entry, dict) or set(entry) != {"name", "values"}:
                    raise PlanError(f"axes[{i}]: expected an object with 'name' and 'values'")
                name = entry["name"]
                if not isinstance(entry["values"], list):
                    raise PlanError(f"axes[{i}].values: expected a list")
                parse = _parse_alpha if name == "alpha" else _parse_number
                vals = tuple(
                    parse(v, f"axes[{i}].values[{j}]") for j, v in enumerate(entry["values"])
                )
                axes.append(SweepAxis(name=name, values=vals))
            kwargs["axes"] = tuple(axes)
    kwargs.setdefault("n_periods", 1000)
    kwargs.setdefault("M", min(1000, kwargs["n_periods"]) or 1)
    # placeholders for fields provided by an axis; grid resolution fills them
    if "alpha" not in kwargs:
        kwargs["alpha"] = math.inf
    try:
        plan = SweepPlan(**kwargs)
        plan.validate()
    except PlanError:
        raise
    except (TypeError, ValueError) as exc:
        raise PlanError(str(exc)) from exc
    return plan


def plan_to_dict(plan: SweepPlan) -> dict:
    """JSON-ready dict; parse_plan(write(plan)) reproduces the plan exactly."""
    out: dict = {}
    for f in dataclasses.fields(plan):
        value = getattr(plan, f.name)
        if f.name == "alpha":
            out["alpha"] = "inf" if math.isinf(value) else value
        elif f.name == "axes":
            if value:
                out["axes"] = [
                    {
                        "name": ax.name,
                        "values": ["inf" if isinstance(v, float) and math.isinf(v) else v
                                   for v in ax.values],
                    }
                    for ax in value
                ]
        elif f.name == "observables":
            out["observables"] = list(value)
        elif value is not None:
            out[f.name] = value
    return out


def parse_plan(path) -> SweepPlan:
    """Load, validate and default-fill a JSON plan file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise PlanError(f"{path}: invalid JSON: {exc}") from exc
    return plan_from_dict(raw)


def write_plan(plan: SweepPlan, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(plan_to_dict(plan), fh, indent=2)
        fh.write("\n")


# ---- CSV emission -------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""  # UNDEFINED serializes as an empty field
    if isinstance(value, float):
        if math.isinf(value):
            return "inf"
        return format(value, ".17g")
    return str(value)


def emit_tables(result: SweepResult, out_dir) -> list[Path]:
    """Write one CSV per observable plus long-format series tables.

    Scalar tables carry one row per grid point with mean, std and the
    effective realization count; series tables are long-format
    (point, n, value) over the realization-averaged record. Returns the
    written paths.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    plan = result.plan
    axis_names = [ax.name for ax in plan.axes]
    written: list[Path] = []

    def writer(path):
        fh = open(path, "w", encoding="utf-8", newline="")
        return fh, csv.writer(fh, lineterminator="\n")

    for name in (n for n in SCALAR_OBSERVABLES if n in plan.observables):
        path = out_dir / f"{name}.csv"
        fh, w = writer(path)
        with fh:
            w.writerow(["point", *axis_names, f"{name}_mean", f"{name}_std", "r_effective"])
            for point in result.points:
                stat = point.scalar_stats.get(name, ScalarStat(None, None, 0))
                axes_vals = [_fmt(point.overrides.get(a)) for a in axis_names]
                w.writerow([point.index, *axes_vals, _fmt(stat.mean), _fmt(stat.std), stat.count])
        written.append(path)

    for name in plan.series_names():
        path = out_dir / f"series_{name}.csv"
        fh, w = writer(path)
        with fh:
            w.writerow(["point", "n", "value"])
            for point in result.points:
                series = point.mean_series.get(name)
                if series is None:
                    continue
                for n, v in zip(series.times, series.values):
                    w.writerow([point.index, int(n), _fmt(float(v))])
        written.append(path)

    if any(p.error for p in result.points):
        path = out_dir / "errors.csv"
        fh, w = writer(path)
        with fh:
            w.writerow(["point", *axis_names, "error"])
            for point in result.points:
                if point.error:
                    axes_vals = [_fmt(point.overrides.get(a)) for a in axis_names]
                    w.writerow([point.index, *axes_vals, point.error])
        written.append(path)
    return written


# ---- snapshots ----------------------------------------------------------------

#: Anchor colors of the sphere-to-color map (orientation -> RGB).
COLOR_ANCHORS = {
    "+x": (255, 255, 255),
    "-x": (0, 0, 0),
    "+y": (0, 0, 255),
    "-y": (255, 255, 0),
    "+z": (255, 0, 0),
    "-z": (0, 255, 0),
}


def orientation_colors(sx: np.ndarray, sy: np.ndarray, sz: np.ndarray) -> np.ndarray:
    """Map unit vectors to RGB via barycentric blending on the octahedron.

    Each octant of the sphere blends the three anchor colors of its axes
    with weights |sx| : |sy| : |sz|, so the six principal orientations hit
    their anchors exactly and the map stays continuous in between.
    """
    ax, ay, az = np.abs(sx), np.abs(sy), np.abs(sz)
    total = ax + ay + az
    total[total == 0] = 1.0
    rgb = np.zeros(sx.shape + (3,))
    for comp, weight, pos, neg in (
        (sx, ax, COLOR_ANCHORS["+x"], COLOR_ANCHORS["-x"]),
        (sy, ay, COLOR_ANCHORS["+y"], COLOR_ANCHORS["-y"]),
        (sz, az, COLOR_ANCHORS["+z"], COLOR_ANCHORS["-z"]),
    ):
        anchor = np.where(comp[..., None] >= 0, np.array(pos, float), np.array(neg, float))
        rgb += (weight / total)[..., None] * anchor
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


def _upscale(arr: np.ndarray, factor: int) -> np.ndarray:
    if factor > 1:
        arr = np.repeat(np.repeat(arr, factor, axis=0), factor, axis=1)
    return arr


def render_snapshot(
    config: SpinConfig,
    spec: LatticeSpec,
    z_slice: int | None = None,
    pixels_per_site: int = 1,
) -> Image.Image:
    """Render one configuration as a PNG-ready image.

    D=2 renders the full lattice; D=3 renders the plane at the given index
    along the last axis (middle plane by default); D=1 renders a single row
    (stack rows with render_spacetime for the space-time raster).
    """
    if config.N != spec.N:
        raise ValueError(f"config has {config.N} sites but lattice has {spec.N}")
    rgb = orientation_colors(config.sx, config.sy, config.sz).reshape(spec.shape + (3,))
    if spec.D == 1:
        arr = rgb[None, :, :]
    elif spec.D == 2:
        arr = rgb
    else:
        k = spec.L // 2 if z_slice is None else z_slice
        if not 0 <= k < spec.L:
            raise ValueError(f"z_slice {k} outside [0, {spec.L})")
        arr = rgb[:, :, k, :]
    return Image.fromarray(_upscale(arr, pixels_per_site))


def render_spacetime(
    configs, spec: LatticeSpec, pixels_per_site: int = 1
) -> Image.Image:
    """Space-time raster for chains: one image row per configuration."""
    if spec.D != 1:
        raise ValueError("space-time rasters are for D=1 lattices")
    rows = []
    for config in configs:
        if config.N != spec.N:
            raise ValueError("configuration size does not match the lattice")
        rows.append(orientation_colors(config.sx, config.sy, config.sz))
    return Image.fromarray(_upscale(np.stack(rows), pixels_per_site))


# ---- presets ------------------------------------------------------------------

_ALPHA_GRIDS = {
    1: (1.2, 1.5, 1.8, 2.1, 2.4, 3.0, math.inf),
    2: (2.5, 3.0, 3.5, 4.0, 5.0, 6.0, 8.0, math.inf),
    3: (3.5, 4.0, 5.0, 6.0, 8.0, math.inf),
}
_FIXED_ALPHA = {1: 1.5, 2: 4.0, 3: math.inf}
_G_GRID = tuple(round(0.15 + 0.025 * i, 3) for i in range(9))
_T_GRID = (1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0)
_W_GRID = tuple(round(0.05 + 0.025 * i, 3) for i in range(11))

PRESET_IDS = ("fig2", "fig3", "fig4", "fig5a", "fig5b", "fig5c", "fig5d", "fig5e", "fig5f", "fig6")


def preset(figure_id: str, scale: str = "paper", dim: int = 1) -> SweepPlan:
    """Parameter set reproducing one figure protocol.

    ``scale='paper'`` matches the published parameters; ``scale='desk'``
    keeps the physics but reduces realization counts and horizons to
    workstation budgets. ``dim`` selects the lattice dimension for the
    multi-dimension protocols (fig3, fig4, fig6); the fig5 panel letters fix
    it themselves.
    """
    if figure_id not in PRESET_IDS:
        raise ValueError(f"unknown preset {figure_id!r}; available: {', '.join(PRESET_IDS)}")
    if scale not in ("paper", "desk"):
        raise ValueError(f"scale must be 'paper' or 'desk', got {scale!r}")
    if dim not in (1, 2, 3):
        raise ValueError(f"dim must be 1, 2 or 3, got {dim}")
    desk = scale == "desk"

    if figure_id == "fig2":
        return SweepPlan(
            D=1, L=100, alpha=math.inf, g=0.515, h=0.1, W=0.1, omega=4.0,
            delta=0.01, n_periods=10_000 if desk else 1_000_000, M=1000,
            subharmonic_n=2, R=20 if desk else 100, master_seed=0,
            axes=(SweepAxis("alpha", (math.inf, 1.5)), SweepAxis("W", (0.1, 0.2))),
            observables=("magnetization", "energy_period", "decorrelator",
                         "plateau", "tau_pth", "tau_th"),
        )
    if figure_id in ("fig3", "fig4"):
        L = {1: 200, 2: 20, 3: 7}[dim]
        base = dict(
            D=dim, L=L, h=0.1, g=0.26, W=0.1, delta=0.01, M=1000,
            subharmonic_n=4, master_seed=0,
            observables=("magnetization", "energy_half", "decorrelator",
                         "tau_pth", "tau_th"),
        )
        if figure_id == "fig3":
            return SweepPlan(
                alpha=_ALPHA_GRIDS[dim][0], omega=2.2,
                n_periods=30_000 if desk else 1_000_000,
                R=8 if desk else 50,
                axes=(SweepAxis("alpha", _ALPHA_GRIDS[dim]),),
                **base,
            )
        return SweepPlan(
            alpha=_FIXED_ALPHA[dim],
            n_periods=1_000_000 if desk else 3_000_000,
            R=6 if desk else 50,
            early_stop=True,
            axes=(SweepAxis("omega", (2.2, 2.5, 2.8, 3.1) if desk else (2.2, 2.5, 2.8, 3.1, 3.4)),),
            **base,
        )
    if figure_id.startswith("fig5"):
        panel = figure_id[-1]
        panel_dim = {"a": 1, "b": 2, "c": 3, "d": 1, "e": 2, "f": 3}[panel]
        L = {1: 150, 2: 12, 3: 6}[panel_dim]
        base = dict(
            D=panel_dim, L=L, h=0.1, W=0.1, delta=0.01,
            n_periods=10_000, M=10_000, subharmonic_n=4,
            R=8 if desk else 50, master_seed=0,
            observables=("magnetization", "order_parameter"),
        )
        if panel in "abc":
            return SweepPlan(
                g=0.25, alpha=_ALPHA_GRIDS[panel_dim][0], T=2.5,
                axes=(SweepAxis("g", _G_GRID), SweepAxis("alpha", _ALPHA_GRIDS[panel_dim])),
                **base,
            )
        return SweepPlan(
            g=0.25, alpha=_FIXED_ALPHA[panel_dim],
            axes=(SweepAxis("g", _G_GRID), SweepAxis("T", _T_GRID)),
            **base,
        )
    # fig6
    L = {1: 2000, 2: 50, 3: 20}[dim]
    return SweepPlan(
        D=dim, L=L, alpha=1.5 if dim == 1 else _FIXED_ALPHA[dim], g=0.25, h=0.1,
        W=0.1, T=2.5, delta=0.01, n_periods=5000, M=5000, subharmonic_n=4,
        R=6 if desk else 20, master_seed=0,
        axes=(SweepAxis("W", _W_GRID),),
        observables=("magnetization", "order_parameter"),
    )


# ---- manifest -----------------------------------------------------------------


def write_manifest(plan: SweepPlan, out_dir) -> Path:
    """Provenance record: resolved plan, seed and library versions.

    Deliberately timestamp-free (and scheduling-free) so identical runs
    produce identical bytes.
    """
    import scipy

    manifest = {
        "plan": plan_to_dict(plan),
        "master_seed": plan.master_seed,
        "versions": {
            "strobospin": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": ".".join(str(v) for v in sys.version_info[:3]),
        },
    }
    path = Path(out_dir) / "run_manifest.json"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


# ---- entry point ---------------------------------------------------------------


def _default_workers() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _apply_overrides(plan: SweepPlan, args) -> SweepPlan:
    updates = {}
    if args.seed is not None:
        updates["master_seed"] = args.seed
    if getattr(args, "field_path", None):
        updates["field_path"] = args.field_path
    return dataclasses.replace(plan, **updates) if updates else plan


def _cmd_run(args) -> int:
    plan = _apply_overrides(parse_plan(args.plan), args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = run_sweep(plan, workers=args.threads)
    paths = emit_tables(result, out_dir)
    paths.append(write_manifest(plan, out_dir))
    failed = [p for p in result.points if p.error]
    for path in paths:
        print(path)
    if failed:
        print(f"{len(failed)} of {len(result.points)} grid points failed; see errors.csv",
              file=sys.stderr)
        return 1
    return 0


def _cmd_preset(args) -> int:
    plan = preset(args.id, scale=args.scale, dim=args.dim)
    if args.seed is not None:
        plan = dataclasses.replace(plan, master_seed=args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{args.id}_{args.scale}.json"
    write_plan(plan, path)
    print(path)
    return 0


def _cmd_snapshot(args) -> int:
    plan = _apply_overrides(parse_plan(args.plan), args)
    overrides = plan.grid()[0]
    plan = plan.resolved(overrides)
    times = sorted({int(t) for t in args.times.split(",")} | {0} if args.times else {0})
    spec = LatticeSpec(plan.D, plan.L, plan.alpha)
    kernel = build_kernel(spec)
    params = DriveParams(g=plan.g, h=plan.h, T=plan.T, omega=plan.omega)
    config = init_polarized_noisy(spec, plan.W, RngStream(plan.master_seed, 0, Purpose.INIT))
    captured: dict[int, SpinConfig] = {}

    def on_record(n, sx, sy, sz, kappa):
        captured[n] = SpinConfig(sx[0].copy(), sy[0].copy(), sz[0].copy())

    engine = Evolver(kernel, params, plan.field_path)
    engine.run(
        config.sx[None, :], config.sy[None, :], config.sz[None, :],
        max(times), np.array(times, dtype=np.int64), on_record,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if spec.D == 1:
        image = render_spacetime([captured[t] for t in times], spec, args.pixels_per_site)
        path = out_dir / "spacetime.png"
        image.save(path)
        written.append(path)
    else:
        for t in times:
            image = render_snapshot(captured[t], spec, args.z_slice, args.pixels_per_site)
            path = out_dir / f"snapshot_{t:08d}.png"
            image.save(path)
            written.append(path)
    if args.csv:
        for t in times:
            path = out_dir / f"spins_{t:08d}.csv"
            write_spin_csv(captured[t], spec, path)
            written.append(path)
    for path in written:
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="strobospin",
        description="Stroboscopic simulator for periodically kicked classical spin lattices",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a sweep plan and write CSV tables")
    run_p.add_argument("plan", help="path to a JSON plan file")
    run_p.add_argument("--out", default="results", help="output directory")
    run_p.add_argument("--seed", type=int, default=None, help="override the plan's master seed")
    run_p.add_argument("--threads", type=int, default=_default_workers(),
                       help=f"worker processes (default from ${THREADS_ENV} or CPU count)")
    run_p.add_argument("--field-path", dest="field_path",
                       choices=("auto", "fft", "direct"), default=None,
                       help="override the effective-field evaluation path")
    run_p.set_defaults(func=_cmd_run)

    preset_p = sub.add_parser("preset", help="write a figure-protocol plan file")
    preset_p.add_argument("id", help=f"one of: {', '.join(PRESET_IDS)}")
    preset_p.add_argument("--scale", choices=("paper", "desk"), default="paper")
    preset_p.add_argument("--dim", type=int, default=1, choices=(1, 2, 3),
                          help="lattice dimension for fig3/fig4/fig6")
    preset_p.add_argument("--seed", type=int, default=None)
    preset_p.add_argument("--out", default=".", help="directory for the plan file")
    preset_p.set_defaults(func=_cmd_preset)

    snap_p = sub.add_parser("snapshot", help="render lattice snapshots from a plan")
    snap_p.add_argument("plan", help="path to a JSON plan file (first grid point is used)")
    snap_p.add_argument("--times", default="", help="comma-separated periods to capture")
    snap_p.add_argument("--out", default="snapshots")
    snap_p.add_argument("--seed", type=int, default=None)
    snap_p.add_argument("--z-slice", dest="z_slice", type=int, default=None,
                        help="plane index for D=3 lattices")
    snap_p.add_argument("--pixels-per-site", dest="pixels_per_site", type=int, default=1)
    snap_p.add_argument("--csv", action="store_true",
                        help="also dump (coordinates, sx, sy, sz) CSVs per captured time")
    snap_p.add_argument("--field-path", dest="field_path",
                        choices=("auto", "fft", "direct"), default=None)
    snap_p.set_defaults(func=_cmd_snapshot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PlanError as exc:
        print(f"plan error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
