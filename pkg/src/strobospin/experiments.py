"""Declarative experiment plans: grids over drive/lattice parameters with
realization averaging, run in parallel across grid points and realizations."""
from __future__ import annotations

import dataclasses
import itertools
import math
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .dynamics import DriveParams, Evolver, SamplingSchedule, chunk_trajectories
from .lattice import LatticeSpec, build_kernel
from .observables import (
    D_INFINITY,
    TimeSeries,
    decorrelator_plateau,
    extract_timescales,
    subharmonic_order_parameter,
)
from .state import Purpose, RngStream, init_polarized_noisy, perturb_copy

#: Observables recorded as stroboscopic time series.
SERIES_OBSERVABLES = ("magnetization", "energy_period", "energy_half", "decorrelator")
#: Observables derived per realization after the run.
SCALAR_OBSERVABLES = ("order_parameter", "tau_pth", "tau_th", "plateau")

#: What each derived scalar needs recorded.
_SCALAR_NEEDS = {
    "order_parameter": "magnetization",
    "tau_pth": "decorrelator",
    "tau_th": "decorrelator",
    "plateau": "decorrelator",
}

#: Plan fields a sweep axis may range over.
AXIS_FIELDS = ("g", "h", "W", "alpha", "T", "omega", "delta", "L")

#: Early-stop rule: stop once this many consecutive recorded samples of the
#: chunk-mean decorrelator sit above the saturation fraction. 0.95 leaves
#: ~3.5 sigma of headroom over finite-size fluctuations of the mean, so the
#: counter does not reset spuriously, while staying above the 0.9 crossing
#: used for timescale extraction.
_SATURATION_FRACTION = 0.95
_SATURATION_SAMPLES = 32


@dataclass(frozen=True)
class SweepAxis:
    name: str
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(self.values))


@dataclass(frozen=True)
class SweepPlan:
    """Base parameters plus up to two named grids to sweep over.

    Exactly one of T and omega must be set once axes are applied (an axis
    over one of them clears the other). ``M`` is the Fourier window, in
    periods, recorded densely at the start of the run; it cannot exceed
    ``n_periods`` and must be divisible by ``subharmonic_n`` when the order
    parameter is requested.
    """

    D: int
    L: int
    alpha: float
    g: float
    h: float
    W: float
    T: float | None = None
    omega: float | None = None
    delta: float = 0.01
    n_periods: int = 1000
    M: int = 1000
    subharmonic_n: int = 4
    R: int = 1
    master_seed: int = 0
    axes: tuple[SweepAxis, ...] = ()
    observables: tuple[str, ...] = ("magnetization", "order_parameter")
    field_path: str = "auto"
    per_decade: int = 96
    early_stop: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "axes", tuple(self.axes))
        object.__setattr__(self, "observables", tuple(self.observables))

    # ---- validation -----------------------------------------------------

    def validate(self) -> None:
        """Raise ValueError naming the offending field on any bad setting."""
        if self.R < 1:
            raise ValueError(f"R: must be >= 1, got {self.R}")
        if self.n_periods < 0:
            raise ValueError(f"n_periods: must be >= 0, got {self.n_periods}")
        if not 1 <= self.M:
            raise ValueError(f"M: must be >= 1, got {self.M}")
        if self.M > self.n_periods and self.n_periods > 0:
            raise ValueError(f"M: Fourier window {self.M} exceeds n_periods {self.n_periods}")
        if self.subharmonic_n < 2:
            raise ValueError(f"subharmonic_n: must be >= 2, got {self.subharmonic_n}")
        if self.W < 0:
            raise ValueError(f"W: must be >= 0, got {self.W}")
        if self.delta < 0:
            raise ValueError(f"delta: must be >= 0, got {self.delta}")
        if self.per_decade < 1:
            raise ValueError(f"per_decade: must be >= 1, got {self.per_decade}")
        if self.field_path not in ("auto", "fft", "direct"):
            raise ValueError(f"field_path: unknown value {self.field_path!r}")
        known = set(SERIES_OBSERVABLES) | set(SCALAR_OBSERVABLES)
        for name in self.observables:
            if name not in known:
                raise ValueError(
                    f"observables: unknown observable {name!r}; known: {sorted(known)}"
                )
        if "order_parameter" in self.observables and self.M % self.subharmonic_n != 0:
            raise ValueError(
                f"M: {self.M} not divisible by subharmonic_n={self.subharmonic_n}; "
                "the subharmonic bin would be misaligned"
            )
        if len(self.axes) > 2:
            raise ValueError(f"axes: at most two axes supported, got {len(self.axes)}")
        seen = set()
        for ax in self.axes:
            if ax.name not in AXIS_FIELDS:
                raise ValueError(f"axes: {ax.name!r} is not sweepable; allowed: {AXIS_FIELDS}")
            if ax.name in seen:
                raise ValueError(f"axes: duplicate axis {ax.name!r}")
            if len(ax.values) == 0:
                raise ValueError(f"axes: axis {ax.name!r} has no values")
            seen.add(ax.name)
        # every resolved grid point must itself be a valid configuration
        for overrides in self.grid():
            resolved = self.resolved(overrides)
            LatticeSpec(resolved.D, resolved.L, resolved.alpha)
            DriveParams(g=resolved.g, h=resolved.h, T=resolved.T, omega=resolved.omega)

    # ---- grid handling ---------------------------------------------------

    def grid(self) -> list[dict[str, float]]:
        """Axis-value combinations in row-major order (first axis outermost)."""
        if not self.axes:
            return [{}]
        combos = itertools.product(*(ax.values for ax in self.axes))
        names = [ax.name for ax in self.axes]
        return [dict(zip(names, combo)) for combo in combos]

    def resolved(self, overrides: dict[str, float]) -> "SweepPlan":
        """Plan for one grid point: axes folded in, axis list cleared."""
        updates: dict[str, Any] = dict(overrides)
        if "T" in updates:
            updates.setdefault("omega", None)
        if "omega" in updates:
            updates.setdefault("T", None)
        if "L" in updates:
            updates["L"] = int(updates["L"])
        return dataclasses.replace(self, axes=(), **updates)

    # ---- derived configuration -------------------------------------------

    def series_names(self) -> tuple[str, ...]:
        """Series to record: the requested ones plus scalar prerequisites."""
        wanted = [n for n in SERIES_OBSERVABLES if n in self.observables]
        for scalar, needs in _SCALAR_NEEDS.items():
            if scalar in self.observables and needs not in wanted:
                wanted.append(needs)
        return tuple(sorted(wanted, key=SERIES_OBSERVABLES.index))

    def needs_pair(self) -> bool:
        return "decorrelator" in self.series_names()

    def schedule(self) -> SamplingSchedule:
        dense = min(self.M, self.n_periods) if self.n_periods > 0 else 0
        return SamplingSchedule(
            dense_until=dense, per_decade=self.per_decade, snap=self.subharmonic_n
        )


@dataclass
class RealizationResult:
    """Recorded series and derived scalars for one realization."""

    scalars: dict[str, float | None]
    series: dict[str, TimeSeries]


@dataclass
class ScalarStat:
    mean: float | None
    std: float | None
    count: int


@dataclass
class PointResult:
    index: int
    overrides: dict[str, float]
    realizations: list[RealizationResult] = field(default_factory=list)
    scalar_stats: dict[str, ScalarStat] = field(default_factory=dict)
    mean_series: dict[str, TimeSeries] = field(default_factory=dict)
    error: str | None = None


@dataclass
class SweepResult:
    plan: SweepPlan
    points: list[PointResult]

    def point(self, **axis_values) -> PointResult:
        """Look up a grid point by its axis values."""
        for p in self.points:
            if all(p.overrides.get(k) == v for k, v in axis_values.items()):
                return p
        raise KeyError(f"no grid point with {axis_values}")


# ---- single-point execution ------------------------------------------------


def _init_chunk(plan: SweepPlan, spec: LatticeSpec, realizations: Sequence[int], pair: bool):
    """Stack initial conditions; pairs are interleaved (copy follows original)."""
    sx, sy, sz = [], [], []
    for r in realizations:
        config = init_polarized_noisy(spec, plan.W, RngStream(plan.master_seed, r, Purpose.INIT))
        sx.append(config.sx)
        sy.append(config.sy)
        sz.append(config.sz)
        if pair:
            copy = perturb_copy(
                config, plan.delta, RngStream(plan.master_seed, r, Purpose.PERTURB)
            )
            sx.append(copy.sx)
            sy.append(copy.sy)
            sz.append(copy.sz)
    return np.stack(sx), np.stack(sy), np.stack(sz)


def _evolve_chunk(plan, spec, engine, realizations):
    """Evolve one batch of realizations; returns (times, {name: (T, B) array})."""
    pair = plan.needs_pair()
    names = plan.series_names()
    sx, sy, sz = _init_chunk(plan, spec, realizations, pair)
    times = plan.schedule().times(plan.n_periods)
    rec: dict[str, list[np.ndarray]] = {n: [] for n in names}
    rec_times: list[int] = []
    h = plan.h
    params = engine.params
    saturation = deque(maxlen=_SATURATION_SAMPLES)
    d_floor = _SATURATION_FRACTION * D_INFINITY

    def on_record(n, rsx, rsy, rsz, kappa):
        rec_times.append(n)
        if pair:
            osx, osy, osz, okap = rsx[0::2], rsy[0::2], rsz[0::2], kappa[0::2]
        else:
            osx, osy, osz, okap = rsx, rsy, rsz, kappa
        mz = osz.mean(axis=1)
        if "magnetization" in rec:
            rec["magnetization"].append(mz)
        if "energy_period" in rec or "energy_half" in rec:
            inter = (osz * (okap - h)).mean(axis=1)
            if "energy_period" in rec:
                e = 0.5 * inter + 0.5 * h * mz + params.omega * params.g * osx.mean(axis=1)
                rec["energy_period"].append(e)
            if "energy_half" in rec:
                rec["energy_half"].append(inter + h * mz)
        stop = False
        if "decorrelator" in rec:
            d2 = (rsx[0::2] - rsx[1::2]) ** 2
            d2 += (rsy[0::2] - rsy[1::2]) ** 2
            d2 += (rsz[0::2] - rsz[1::2]) ** 2
            d = np.sqrt(d2.mean(axis=1))
            rec["decorrelator"].append(d)
            if plan.early_stop:
                saturation.append(float(d.mean()))
                stop = (
                    len(saturation) == _SATURATION_SAMPLES
                    and min(saturation) >= d_floor
                    and n >= plan.M
                )
        return stop

    engine.run(sx, sy, sz, plan.n_periods, times, on_record)
    t = np.array(rec_times, dtype=np.int64)
    stacked = {name: np.array(vals) for name, vals in rec.items()}
    return t, stacked


def _derive_scalars(plan: SweepPlan, series: dict[str, TimeSeries]) -> dict[str, float | None]:
    out: dict[str, float | None] = {}
    if "order_parameter" in plan.observables:
        try:
            out["order_parameter"] = subharmonic_order_parameter(
                series["magnetization"], plan.M, plan.subharmonic_n
            )
        except ValueError:
            out["order_parameter"] = None  # record truncated before the window
    if "tau_pth" in plan.observables or "tau_th" in plan.observables:
        pair = extract_timescales(series["decorrelator"])
        if "tau_pth" in plan.observables:
            out["tau_pth"] = pair.tau_pth
        if "tau_th" in plan.observables:
            out["tau_th"] = pair.tau_th
    if "plateau" in plan.observables:
        out["plateau"] = decorrelator_plateau(series["decorrelator"])
    return out


def run_point(plan: SweepPlan, realizations: Sequence[int] | None = None) -> list[RealizationResult]:
    """Run one resolved grid point for the given realization indices.

    Realizations are co-evolved in cache-sized batches; results are
    bit-identical regardless of the batching, so any split across workers
    reproduces the same numbers.
    """
    if plan.axes:
        raise ValueError("run_point expects a resolved plan (no axes)")
    if realizations is None:
        realizations = range(plan.R)
    realizations = list(realizations)
    spec = LatticeSpec(plan.D, plan.L, plan.alpha)
    kernel = build_kernel(spec)
    params = DriveParams(g=plan.g, h=plan.h, T=plan.T, omega=plan.omega)
    engine = Evolver(kernel, params, plan.field_path)
    pair = plan.needs_pair()
    per_chunk = chunk_trajectories(spec.N, len(realizations) * (2 if pair else 1), pair=pair)
    traj_per_real = 2 if pair else 1
    reals_per_chunk = max(1, per_chunk // traj_per_real)
    results: list[RealizationResult] = []
    for lo in range(0, len(realizations), reals_per_chunk):
        chunk = realizations[lo : lo + reals_per_chunk]
        times, stacked = _evolve_chunk(plan, spec, engine, chunk)
        for k, _ in enumerate(chunk):
            series = {
                name: TimeSeries(times, arr[:, k], {"observable": name})
                for name, arr in stacked.items()
            }
            results.append(RealizationResult(scalars=_derive_scalars(plan, series), series=series))
    return results


# ---- sweep orchestration -----------------------------------------------------


def _run_task(plan: SweepPlan, point_index: int, overrides: dict, r_lo: int, r_hi: int):
    resolved = plan.resolved(overrides)
    return point_index, r_lo, run_point(resolved, range(r_lo, r_hi))


def _aggregate(plan: SweepPlan, point: PointResult) -> None:
    reals = point.realizations
    if not reals:
        return
    scalar_names = [n for n in SCALAR_OBSERVABLES if n in plan.observables]
    for name in scalar_names:
        values = [r.scalars.get(name) for r in reals]
        defined = np.array([v for v in values if v is not None], dtype=float)
        if defined.size:
            point.scalar_stats[name] = ScalarStat(
                mean=float(defined.mean()),
                std=float(defined.std()),  # ddof=0 keeps std defined for R=1
                count=int(defined.size),
            )
        else:
            point.scalar_stats[name] = ScalarStat(mean=None, std=None, count=0)
    for name in plan.series_names():
        length = min(len(r.series[name]) for r in reals)
        times = reals[0].series[name].times[:length]
        values = np.mean([r.series[name].values[:length] for r in reals], axis=0)
        point.mean_series[name] = TimeSeries(times, values, {"observable": name, "mean_over": len(reals)})


def _task_plan(plan: SweepPlan, n_points: int, workers: int) -> int:
    """Realizations per task: whole points unless more parallelism is needed."""
    if n_points >= 2 * workers:
        return plan.R
    splits = max(1, math.ceil(2 * workers / max(1, n_points)))
    return max(1, math.ceil(plan.R / splits))


def run_sweep(plan: SweepPlan, workers: int = 1) -> SweepResult:
    """Evaluate the full grid with realization averaging.

    Work is split over (grid point, realization range) tasks on a process
    pool. Failed tasks mark their grid point with the error instead of
    aborting the sweep. Deterministic for a fixed master_seed, independent
    of the worker count.
    """
    plan.validate()
    grid = plan.grid()
    points = [PointResult(index=i, overrides=dict(ov)) for i, ov in enumerate(grid)]
    workers = max(1, int(workers))
    r_chunk = _task_plan(plan, len(grid), workers)
    tasks = []
    for i, overrides in enumerate(grid):
        for lo in range(0, plan.R, r_chunk):
            tasks.append((i, overrides, lo, min(plan.R, lo + r_chunk)))

    buckets: dict[int, list[tuple[int, list[RealizationResult]]]] = {i: [] for i in range(len(grid))}

    def record(outcome, task):
        i, overrides, lo, hi = task
        if isinstance(outcome, Exception):
            ctx = f"grid point {i} {overrides}, realizations [{lo}, {hi})"
            msg = f"{ctx}: {outcome!r}"
            points[i].error = msg if points[i].error is None else points[i].error + "; " + msg
        else:
            buckets[i].append((lo, outcome[2]))

    if workers == 1:
        for task in tasks:
            try:
                outcome = _run_task(plan, task[0], task[1], task[2], task[3])
            except Exception as exc:  # noqa: BLE001 - failure is data here
                outcome = exc
            record(outcome, task)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_task, plan, t[0], t[1], t[2], t[3]) for t in tasks]
            for future, task in zip(futures, tasks):
                try:
                    outcome = future.result()
                except Exception as exc:  # noqa: BLE001
                    outcome = exc
                record(outcome, task)

    for point in points:
        for _, bundle in sorted(buckets[point.index], key=lambda kv: kv[0]):
            point.realizations.extend(bundle)
        _aggregate(plan, point)
    return SweepResult(plan=plan, points=points)


# ---- frequency scans ---------------------------------------------------------


def fit_log_slope(xs: Sequence[float], ys: Sequence[float]):
    """Least-squares slope of ln(y) against x, with its standard error.

    Returns (slope, stderr); stderr is None with only two points.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.log(np.asarray(ys, dtype=float))
    if xs.size < 2:
        raise ValueError("need at least two points to fit")
    xbar, ybar = xs.mean(), ys.mean()
    sxx = float(np.sum((xs - xbar) ** 2))
    slope = float(np.sum((xs - xbar) * (ys - ybar)) / sxx)
    intercept = ybar - slope * xbar
    if xs.size == 2:
        return slope, None
    resid = ys - (intercept + slope * xs)
    s2 = float(np.sum(resid**2)) / (xs.size - 2)
    return slope, math.sqrt(s2 / sxx)


@dataclass
class FrequencyScanResult:
    sweep: SweepResult
    table: list[dict[str, float | None]]
    slope: float | None
    slope_stderr: float | None


def frequency_scan(plan: SweepPlan, workers: int = 1) -> FrequencyScanResult:
    """Sweep the drive frequency and fit ln(tau_th) against omega.

    The plan must carry a single ``omega`` axis; the timescale observables
    are added if missing. Points whose thermalization never crosses within
    the horizon stay in the table with tau_th undefined and are excluded
    from the fit; fewer than two defined points leaves the fit undefined.
    """
    if len(plan.axes) != 1 or plan.axes[0].name != "omega":
        raise ValueError("frequency_scan needs exactly one axis, over omega")
    needed = tuple(dict.fromkeys(plan.observables + ("tau_pth", "tau_th")))
    plan = dataclasses.replace(plan, observables=needed)
    sweep = run_sweep(plan, workers=workers)
    table = []
    for point in sweep.points:
        stats = point.scalar_stats
        table.append(
            {
                "omega": point.overrides["omega"],
                "tau_pth": stats.get("tau_pth", ScalarStat(None, None, 0)).mean,
                "tau_th": stats.get("tau_th", ScalarStat(None, None, 0)).mean,
            }
        )
    defined = [(row["omega"], row["tau_th"]) for row in table if row["tau_th"] is not None]
    if len(defined) < 2:
        return FrequencyScanResult(sweep=sweep, table=table, slope=None, slope_stderr=None)
    slope, stderr = fit_log_slope([d[0] for d in defined], [d[1] for d in defined])
    return FrequencyScanResult(sweep=sweep, table=table, slope=slope, slope_stderr=stderr)
