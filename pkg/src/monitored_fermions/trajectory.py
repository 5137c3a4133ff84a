"""Noise streams, the trajectory loop, and the trajectory/time averages.

Every engine in the package exposes the same small surface so that one loop
drives all of them:

``n_channels``
    number of monitored operators (one Wiener increment each per step)
``gamma`` / ``dt``
    monitoring rate and time step
``step(increments)``
    one composite (unitary + measurement) step

Observables are plain callables ``f(engine) -> float``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.integrate import trapezoid

from .errors import EmptyWindow, MismatchedGrids

logger = logging.getLogger(__name__)

ALGORITHM_TAG = "numpy-Philox4x64-10/SeedSequence(master_seed, spawn_key=(stream_id,))"

DEFAULT_N_TRAJ = 48


@dataclass
class NoiseStream:
    """Counter-based random stream owned by one trajectory.

    The stream is a pure function of ``(seed, stream_id)``: Philox keyed by a
    ``SeedSequence`` whose spawn key is the trajectory index, so trajectories
    can be farmed out to any number of workers without changing a single bit.
    """

    seed: int
    stream_id: int = 0
    algorithm_tag: str = ALGORITHM_TAG
    generator: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.seed < 0 or self.stream_id < 0:
            raise ValueError("seed and stream_id must be non-negative")
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),))
        self.generator = np.random.Generator(np.random.Philox(ss))

    def normals(self, size) -> np.ndarray:
        return self.generator.standard_normal(size)

    def uniform_open_closed(self) -> float:
        """One draw from (0, 1]."""
        return 1.0 - self.generator.random()


def wiener_increments(stream: NoiseStream, L: int, gamma: float, dt: float) -> np.ndarray:
    """Independent Gaussian increments with mean 0 and variance ``gamma * dt``.

    Draws are consumed even for ``gamma == 0`` so that streams stay aligned
    across parameter points.
    """
    if gamma < 0 or dt <= 0:
        raise ValueError("need gamma >= 0 and dt > 0")
    return np.sqrt(gamma * dt) * stream.normals(L)


@dataclass(frozen=True)
class StepSchedule:
    dt: float
    t_f: float
    t_0: float | None = None
    sample_stride: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.sample_stride < 1:
            raise ValueError("sample_stride must be >= 1")
        t0 = self.window_start
        if not 0 <= t0 < self.t_f:
            raise ValueError("need 0 <= t_0 < t_f")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_f / self.dt))

    @property
    def window_start(self) -> float:
        # t_0 defaults to half the run; recorded as a decision in every manifest
        return self.t_f / 2 if self.t_0 is None else self.t_0

    def sample_steps(self) -> np.ndarray:
        return np.arange(0, self.n_steps + 1, self.sample_stride)


@dataclass
class TrajectorySeries:
    times: np.ndarray
    values: dict[str, np.ndarray]


@dataclass
class EnsembleResult:
    times: np.ndarray
    mean_series: dict[str, np.ndarray]
    stderr_series: dict[str, np.ndarray]
    n_traj: int


@dataclass(frozen=True)
class SteadyState:
    value: float
    stderr: float
    t0: float
    tf: float
    drift_slope: float
    drifting: bool


def run_trajectory(
    engine,
    schedule: StepSchedule,
    stream: NoiseStream,
    observables: Mapping[str, Callable],
) -> TrajectorySeries:
    """Integrate one quantum trajectory and sample the observables.

    Samples are taken at step 0 and then every ``schedule.sample_stride`` steps.
    Engines raise :class:`NumericalBreakdown` themselves when their
    normalisation fails.
    """
    sample_steps = schedule.sample_steps()
    values = {name: np.empty(len(sample_steps)) for name in observables}
    n_channels, gamma, dt = engine.n_channels, engine.gamma, schedule.dt

    def record(k):
        for name, obs in observables.items():
            values[name][k] = obs(engine)

    record(0)
    k = 1
    for step in range(1, schedule.n_steps + 1):
        engine.step(wiener_increments(stream, n_channels, gamma, dt))
        if k < len(sample_steps) and step == sample_steps[k]:
            record(k)
            k += 1
    return TrajectorySeries(times=sample_steps * dt, values=values)


def ensemble_average(series_set: Sequence[TrajectorySeries]) -> EnsembleResult:
    """Mean and standard error over trajectories, time point by time point.

    The standard error is the sample standard deviation (``ddof=1``) divided by
    ``sqrt(N_r)``; a single trajectory gets a zero error bar.
    """
    if not series_set:
        raise MismatchedGrids("no series to average")
    times = np.asarray(series_set[0].times)
    names = list(series_set[0].values)
    for s in series_set[1:]:
        if len(s.times) != len(times) or not np.array_equal(s.times, times):
            raise MismatchedGrids("series do not share a time grid")
        if list(s.values) != names:
            raise MismatchedGrids("series carry different observables")
    n = len(series_set)
    mean, err = {}, {}
    for name in names:
        stack = np.stack([s.values[name] for s in series_set])
        mean[name] = stack.mean(axis=0)
        if n > 1:
            err[name] = stack.std(axis=0, ddof=1) / np.sqrt(n)
        else:
            err[name] = np.zeros(len(times))
    return EnsembleResult(times=times, mean_series=mean, stderr_series=err, n_traj=n)


def _window(times, values, t0, tf):
    inner = (times > t0) & (times < tf)
    t = np.concatenate([[t0], times[inner], [tf]])
    v = np.concatenate([[np.interp(t0, times, values)], values[inner], [np.interp(tf, times, values)]])
    return t, v


def steady_state_average(
    result: EnsembleResult,
    t0: float | None = None,
    tf: float | None = None,
    observable: str | None = None,
    drift_tol: float = 0.05,
) -> SteadyState:
    """Trapezoidal time average of the trajectory mean over ``[t0, tf]``.

    ``t0`` defaults to half of ``tf`` (itself the last sampled time). The error
    bar is the time average of the per-time standard error, which is
    conservative because errors at nearby times are correlated.

    The drift check fits a straight line to the mean over the window and flags
    the window when the accumulated change ``|slope| * (tf - t0)`` exceeds
    ``drift_tol`` times the average.
    """
    if observable is None:
        if len(result.mean_series) != 1:
            raise ValueError("observable must be named when several are present")
        observable = next(iter(result.mean_series))
    times = np.asarray(result.times, dtype=float)
    tf = float(times[-1]) if tf is None else float(tf)
    t0 = tf / 2 if t0 is None else float(t0)
    if not (t0 < tf) or t0 < times[0] - 1e-12 or tf > times[-1] + 1e-12:
        raise EmptyWindow(f"window [{t0}, {tf}] not inside the sampled grid")
    t, v = _window(times, result.mean_series[observable], t0, tf)
    _, e = _window(times, result.stderr_series[observable], t0, tf)
    span = tf - t0
    value = float(trapezoid(v, t) / span)
    stderr = float(trapezoid(e, t) / span)
    if len(t) >= 3:
        slope = float(np.polyfit(t, v, 1)[0])
    else:
        slope = float((v[-1] - v[0]) / span)
    drifting = abs(slope) * span > drift_tol * max(abs(value), 1e-12)
    return SteadyState(value, stderr, t0, tf, slope, bool(drifting))


def steady_state_from_series(
    series_set: Sequence[TrajectorySeries],
    observable: str,
    t0: float | None = None,
    tf: float | None = None,
    drift_tol: float = 0.05,
) -> SteadyState:
    """Steady value from the raw trajectories rather than the ensemble mean.

    The value equals :func:`steady_state_average` of the ensemble (the time
    average is linear), but the error bar is the standard error of the
    per-trajectory window averages, which accounts for time correlations.
    """
    ens = ensemble_average(series_set)
    base = steady_state_average(ens, t0, tf, observable, drift_tol)
    per_traj = []
    for s in series_set:
        t, v = _window(np.asarray(s.times, dtype=float), s.values[observable], base.t0, base.tf)
        per_traj.append(trapezoid(v, t) / (base.tf - base.t0))
    per_traj = np.asarray(per_traj)
    n = len(per_traj)
    err = float(per_traj.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return SteadyState(float(per_traj.mean()), err, base.t0, base.tf, base.drift_slope, base.drifting)


def _one_trajectory(args):
    factory, schedule, seed, index, observables = args
    engine = factory()
    return run_trajectory(engine, schedule, NoiseStream(seed, index), observables)


def run_ensemble(
    factory: Callable,
    schedule: StepSchedule,
    master_seed: int,
    n_traj: int,
    observables: Mapping[str, Callable],
    workers: int = 1,
    first_index: int = 0,
) -> tuple[EnsembleResult, list[TrajectorySeries]]:
    """Run ``n_traj`` independent trajectories and average them.

    ``factory`` builds a fresh engine; with ``workers > 1`` it and the
    observables must be picklable. Results are reduced in trajectory order, so
    the output does not depend on the worker count.
    """
    jobs = [(factory, schedule, master_seed, first_index + i, observables) for i in range(n_traj)]
    if workers > 1 and n_traj > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            series = list(pool.map(_one_trajectory, jobs))
    else:
        series = [_one_trajectory(job) for job in jobs]
    return ensemble_average(series), series
