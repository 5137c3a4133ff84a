"""Run sweeps, persist results, resume interrupted runs, and drive the fits.

Layout of a run directory::

    manifest.json        config, config hash, per-point status
    results.csv          one row per (point, observable), columns RESULT_COLUMNS
    points/<id>.json     checkpoint of a finished point
    series/<id>.csv      ensemble time series (time, observable, value, stderr)
    couplings/*.json     SYK coupling tensors, for exact reruns
"""

from __future__ import annotations

import csv
import json
import logging
import os
import traceback
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import bdg, ladder, manybody, scaling, slater
from .config import MODEL_OBSERVABLES, RunConfig, config_hash, from_dict
from .errors import ConfigError, CorruptCheckpoint, EngineError, MissingData
from .observables import subsystem_size
from .trajectory import (ALGORITHM_TAG, EnsembleResult, StepSchedule, ensemble_average, run_ensemble,
                         steady_state_average, steady_state_from_series)

logger = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "MONITORED_FERMIONS_OUTPUT"
DEFAULT_OUTPUT_ROOT = "runs"

RESULT_COLUMNS = (
    "point_id", "model", "L", "gamma", "observable", "steady_value", "stderr", "stderr_window",
    "t0", "tf", "drifting", "n_traj", "master_seed", "rng", "config_hash", "parameters",
)


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, DEFAULT_OUTPUT_ROOT))


def point_id(index: int, params: dict) -> str:
    tag = "_".join(f"{k}{params[k]}" for k in ("L", "gamma", "alpha", "h", "p1", "p2") if k in params)
    return f"p{index:04d}_{tag}".replace(" ", "")


@lru_cache(maxsize=16)
def _syk_hamiltonian(L, J, seed):
    return manybody.build_syk_hamiltonian(manybody.sample_syk_couplings(L, J, seed))


@lru_cache(maxsize=16)
def _tv_hamiltonian(L, t, W, V):
    return manybody.build_tv_hamiltonian(L, t, W, V)


@lru_cache(maxsize=16)
def _basis(L):
    return manybody.SectorBasis.half_filling(L)


def coupling_seed(params: dict, master_seed: int) -> int:
    s = params.get("coupling_seed")
    return int(master_seed if s is None else s)


@dataclass(frozen=True)
class EngineFactory:
    """Picklable constructor of a fresh engine for one parameter point."""

    params: tuple
    dt: float
    master_seed: int

    def __call__(self):
        p = dict(self.params)
        name, L = p["model"], int(p["L"])
        if name == "tight-binding":
            return slater.SlaterEngine(L, p["J"], p["gamma"], self.dt)
        if name == "kitaev-onsite":
            return bdg.BdGEngine(L, p["J"], p["h"], p["gamma"], self.dt, monitoring="onsite")
        if name == "kitaev-longrange":
            return bdg.BdGEngine(L, p["J"], p["h"], p["gamma"], self.dt, monitoring="longrange",
                                 alpha=p["alpha"])
        if name == "tv":
            H = _tv_hamiltonian(L, p["t"], p["W"], p["V"])
        elif name == "syk":
            H = _syk_hamiltonian(L, p["J"], coupling_seed(p, self.master_seed))
        else:
            raise ConfigError(f"no trajectory engine for model {name!r}")
        return manybody.ManyBodyEngine(H, _basis(L), p["gamma"], self.dt, propagator=p["propagator"])


@dataclass(frozen=True)
class Entropy:
    ell: int

    def __call__(self, engine):
        return engine.entropy(self.ell)


class Ipr:
    def __call__(self, engine):
        return engine.ipr()


class LogIpr:
    def __call__(self, engine):
        return float(np.log(engine.ipr()))


def observables_for(params: dict) -> dict:
    L = int(params["L"])
    obs = {"entropy": Entropy(subsystem_size(params.get("ell", "L/2"), L))}
    if "ipr" in MODEL_OBSERVABLES[params["model"]]:
        obs["ipr"] = Ipr()
        obs["ln_ipr"] = LogIpr()
    return obs


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialise {type(x).__name__}")


def _write_json(path: Path, data):
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default))
    os.replace(tmp, path)


def run_point(params: dict, cfg: RunConfig, workers: int = 1, run_dir: Path | None = None) -> dict:
    """Simulate one sweep point; returns the checkpoint payload (rows and series)."""
    h = config_hash(cfg)
    seed = cfg.ensemble.master_seed
    base = {
        "model": params["model"], "L": int(params["L"]), "gamma": params.get("gamma"),
        "n_traj": cfg.ensemble.N_r, "master_seed": seed, "rng": ALGORITHM_TAG,
        "config_hash": h,
        "parameters": json.dumps(params, sort_keys=True, default=_json_default),
    }
    if params["model"] == "ladder":
        lp = ladder.LadderParams(**{k: params[k] for k in
                                    ("t1", "t2", "t12", "p1", "p2", "tau_u", "N_st", "m")})
        ell = subsystem_size(params.get("ell", "L/2"), int(params["L"]))
        res = ladder.run_protocol(lp, int(params["L"]), seed, cfg.ensemble.N_r, ell)
        row = dict(base, observable="fln", steady_value=res.value, stderr=res.stderr,
                   stderr_window=res.stderr, t0=lp.N_st * lp.tau_u, tf=(lp.N_st + lp.m) * lp.tau_u, drifting=False)
        return {"rows": [row], "series": None}

    sched = StepSchedule(cfg.schedule.dt, cfg.schedule.t_f, cfg.schedule.t_0, cfg.schedule.stride)
    factory = EngineFactory(tuple(sorted(params.items(), key=lambda kv: kv[0])), sched.dt, seed)
    obs = observables_for(params)
    if params["model"] == "syk" and run_dir is not None:
        cs = coupling_seed(params, seed)
        path = run_dir / "couplings" / f"syk_L{params['L']}_J{params['J']}_seed{cs}.json"
        if not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            _write_json(path, manybody.sample_syk_couplings(int(params["L"]), params["J"], cs).to_dict())
    if params["model"] == "tight-binding" and workers == 1:
        # batched path: identical streams and arithmetic, far less interpreter overhead
        series = slater.run_slater_ensemble(int(params["L"]), params["J"], params["gamma"], sched, seed,
                                            cfg.ensemble.N_r, obs["entropy"].ell)
        ens = ensemble_average(series)
    else:
        ens, series = run_ensemble(factory, sched, seed, cfg.ensemble.N_r, obs, workers=workers)
    rows = []
    for name in obs:
        # stderr: window average of the per-time standard error of the ensemble mean;
        # stderr_window: spread of the per-trajectory window averages (much smaller)
        ss = steady_state_from_series(series, name, sched.window_start, float(ens.times[-1]))
        st = steady_state_average(ens, ss.t0, ss.tf, name)
        rows.append(dict(base, observable=name, steady_value=ss.value, stderr=st.stderr,
                         stderr_window=ss.stderr, t0=ss.t0, tf=ss.tf, drifting=ss.drifting))
    ts = {"times": ens.times, "mean": ens.mean_series, "stderr": ens.stderr_series}
    return {"rows": rows, "series": ts}


def _write_series(path: Path, series: dict, h: str):
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={h}\n")
        w = csv.writer(fh)
        w.writerow(["time", "observable", "value", "stderr"])
        for name, vals in series["mean"].items():
            for t, v, e in zip(series["times"], vals, series["stderr"][name]):
                w.writerow([repr(float(t)), name, repr(float(v)), repr(float(e))])


def read_series(path) -> EnsembleResult:
    """Load an ensemble time-series file written by a run."""
    times, mean, err = {}, {}, {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(line for line in fh if not line.startswith("#")):
            name = r["observable"]
            times.setdefault(name, []).append(float(r["time"]))
            mean.setdefault(name, []).append(float(r["value"]))
            err.setdefault(name, []).append(float(r["stderr"]))
    if not times:
        raise MissingData(f"no series in {path}")
    t = np.array(next(iter(times.values())))
    return EnsembleResult(t, {k: np.array(v) for k, v in mean.items()},
                          {k: np.array(v) for k, v in err.items()}, n_traj=0)


def write_results(path: Path, rows: list[dict]):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            # rows from older checkpoints may lack newer columns
            w.writerow({k: (repr(r[k]) if isinstance(r.get(k), float) else r.get(k, "")) for k in RESULT_COLUMNS})


def read_results(path) -> list[dict]:
    """Load a results table, converting numeric columns."""
    path = Path(path)
    if not path.exists():
        raise MissingData(f"no results table at {path}")
    out = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            for k in ("L", "n_traj", "master_seed"):
                r[k] = int(r[k])
            for k in ("gamma", "steady_value", "stderr", "stderr_window", "t0", "tf"):
                r[k] = float(r[k]) if r[k] not in ("", "None") else None
            r["drifting"] = r["drifting"] == "True"
            r["parameters"] = json.loads(r["parameters"])
            out.append(r)
    return out


def load_manifest(run_dir) -> dict:
    path = Path(run_dir) / "manifest.json"
    try:
        m = json.loads(path.read_text())
    except FileNotFoundError:
        raise CorruptCheckpoint(f"no manifest in {run_dir}") from None
    except json.JSONDecodeError as exc:
        raise CorruptCheckpoint(f"manifest unreadable: {exc}") from None
    need = {"config", "config_hash", "points"}
    if not isinstance(m, dict) or not need <= set(m):
        raise CorruptCheckpoint("manifest lacks required keys")
    try:
        stored = from_dict(m["config"])
    except ConfigError as exc:
        raise CorruptCheckpoint(f"manifest config invalid: {exc}") from None
    if config_hash(stored) != m["config_hash"]:
        raise CorruptCheckpoint("manifest config does not match its recorded hash")
    return m


def _manifest(cfg, h, statuses, ids):
    return {
        "config": cfg.to_dict(),
        "config_hash": h,
        "rng": ALGORITHM_TAG,
        "decisions": {
            "steady_window_start": "t_f / 2 unless schedule.t_0 is set",
            "noise_streams": "one per (master_seed, trajectory index), shared across sweep points",
            "ladder_tau_u": cfg.model.get("tau_u") if cfg.model_name == "ladder" else None,
            "ladder_sweep_order": ladder.SWEEP_ORDER if cfg.model_name == "ladder" else None,
            "syk_disorder": ("trajectory average over one coupling realization per point; "
                             "sweep coupling_seed for independent realizations")
                            if cfg.model_name == "syk" else None,
        },
        "points": [{"id": i, **statuses[i]} for i in ids],
    }


def simulate(cfg: RunConfig, run_dir=None, workers: int = 1, resume: bool = False,
             stop_after: int | None = None) -> list[dict]:
    """Execute every sweep point, checkpointing each one as it finishes.

    Points that raise are recorded as failed in the manifest and do not stop
    the sweep. With ``resume`` the directory's manifest must carry the same
    config hash; finished points are loaded from their checkpoints.
    ``stop_after`` ends the run after that many newly computed points (used to
    exercise interruption).
    """
    h = config_hash(cfg)
    run_dir = Path(run_dir) if run_dir else Path(cfg.output.get("directory") or output_root() / h[:12])
    points = cfg.points()
    ids = [point_id(i, p) for i, p in enumerate(points)]
    statuses = {i: {"status": "pending"} for i in ids}
    if resume:
        m = load_manifest(run_dir)
        if m["config_hash"] != h:
            raise ConfigError(f"run directory holds config {m['config_hash'][:12]}, not {h[:12]}")
        for entry in m["points"]:
            if entry.get("id") in statuses and entry.get("status") == "done":
                statuses[entry["id"]] = {k: v for k, v in entry.items() if k != "id"}
    elif (run_dir / "manifest.json").exists():
        raise ConfigError(f"{run_dir} already holds a run; use resume")
    for sub in ("points", "series"):
        (run_dir / sub).mkdir(parents=True, exist_ok=True)
    _write_json(run_dir / "manifest.json", _manifest(cfg, h, statuses, ids))

    rows, computed = [], 0
    for pid, params in zip(ids, points):
        ck = run_dir / "points" / f"{pid}.json"
        if statuses[pid]["status"] == "done":
            try:
                payload = json.loads(ck.read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise CorruptCheckpoint(f"checkpoint {ck.name} unreadable: {exc}") from None
            if payload.get("config_hash") != h:
                raise CorruptCheckpoint(f"checkpoint {ck.name} belongs to another config")
            rows.extend(payload["rows"])
            continue
        if stop_after is not None and computed >= stop_after:
            break
        try:
            payload = run_point(params, cfg, workers, run_dir)
        except Exception as exc:  # noqa: BLE001 - one bad point must not end the sweep
            err = EngineError(f"{type(exc).__name__}: {exc}", point=params)
            logger.error("point %s failed: %s", pid, err)
            statuses[pid] = {"status": "failed", "error": str(err), "point": params,
                             "traceback": traceback.format_exc(limit=3)}
        else:
            for r in payload["rows"]:
                r["point_id"] = pid
            if payload["series"] is not None:
                _write_series(run_dir / "series" / f"{pid}.csv", payload["series"], h)
            _write_json(ck, {"config_hash": h, "params": params, "rows": payload["rows"]})
            statuses[pid] = {"status": "done"}
            rows.extend(payload["rows"])
        computed += 1
        _write_json(run_dir / "manifest.json", _manifest(cfg, h, statuses, ids))
    write_results(run_dir / "results.csv", rows)
    return rows


def checkpoint_resume(run_dir, cfg: RunConfig | None = None, workers: int = 1) -> list[dict]:
    """Continue an interrupted run; ``cfg`` (if given) must hash to the stored config."""
    m = load_manifest(run_dir)
    stored = from_dict(m["config"])
    if cfg is not None and config_hash(cfg) != m["config_hash"]:
        raise ConfigError("config changed since the run started; refusing to resume")
    return simulate(stored, run_dir, workers, resume=True)


def _select(rows, observable, where=None):
    sel = [r for r in rows if r["observable"] == observable]
    for k, v in (where or {}).items():
        sel = [r for r in sel if r["parameters"].get(k) == v]
    if not sel:
        raise MissingData(f"no rows for observable {observable!r} matching {where or {}}")
    return sel


def _groups(rows, axis):
    groups = {}
    for r in rows:
        p = r["parameters"]
        if axis not in p:
            raise MissingData(f"axis {axis!r} not present in the table")
        key = tuple(sorted((k, v) for k, v in p.items() if k not in (axis, "coupling_seed")))
        groups.setdefault(key, []).append(r)
    return groups


def _points_table(rows, axis):
    pts = np.array([[r["parameters"][axis], r["steady_value"], r["stderr"]] for r in rows], dtype=float)
    # zero error bars (single trajectory) would give infinite weights
    floor = 1e-12 + 1e-6 * np.abs(pts[:, 1]).max()
    pts[:, 2] = np.maximum(pts[:, 2], floor)
    return pts


def fit(rows: list[dict], spec: dict, out_dir=None) -> dict:
    """Fit a results table according to ``spec``.

    ``spec`` keys: ``observable`` (default ``entropy``), ``axis`` (``L`` or
    ``gamma``), ``fix_b`` (optional), ``where`` (parameter filter),
    ``gamma_max`` (cutoff for the L0 power law). Each group of rows sharing
    every parameter except the axis is fitted separately.
    """
    observable = spec.get("observable", "entropy")
    axis = spec.get("axis", "L")
    sel = _select(rows, observable, spec.get("where"))
    report = {"observable": observable, "axis": axis, "fits": []}
    curves = []
    for key, grp in _groups(sel, axis).items():
        pts = _points_table(grp, axis)
        label = dict(key)
        if axis == "L":
            res = scaling.fit_scaling(pts, fix_b=spec.get("fix_b"))
            report["fits"].append({"group": label, **res.to_dict()})
            cs = scaling.curve_samples(res, pts[:, 0].min(), pts[:, 0].max())
        elif axis == "gamma":
            res = scaling.fit_lorentzian(pts)
            report["fits"].append({"group": label, **res.to_dict()})
            g = np.geomspace(pts[:, 0].min(), pts[:, 0].max(), 128)
            cs = {"gamma": g, "fit": res(g)}
        else:
            raise MissingData(f"unsupported axis {axis!r}")
        for k in range(len(next(iter(cs.values())))):
            curves.append({"group": json.dumps(label, sort_keys=True),
                           **{n: float(v[k]) for n, v in cs.items()}})
        for p in pts:
            curves.append({"group": json.dumps(label, sort_keys=True), "data_x": p[0], "data_y": p[1],
                           "data_err": p[2]})
    if axis == "L" and "gamma" in sel[0]["parameters"]:
        l0 = [(f["group"].get("gamma"), f["L0"]) for f in report["fits"] if f["group"].get("gamma")]
        finite = [(g, v) for g, v in l0 if np.isfinite(v)]
        if len({g for g, _ in finite}) >= 3:
            pl = scaling.fit_L0_powerlaw(finite, spec.get("gamma_max"))
            report["L0_powerlaw"] = vars(pl)
    if axis == "gamma":
        byL = [(f["group"].get("L"), f) for f in report["fits"] if f["group"].get("L")]
        if len({L for L, _ in byL}) >= 4:
            K = [(L, f["K"], max(f["K_err"], 1e-12)) for L, f in byL]
            Q = [(L, f["Q"], max(f["Q_err"], 1e-12)) for L, f in byL]
            B = [(L, f["beta"], max(f["beta_err"], 1e-12)) for L, f in byL]
            report["parameter_scalings"] = scaling.fit_parameter_scalings(K, Q, B).to_dict()
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_json(out_dir / f"fit_{observable}_vs_{axis}.json", report)
        cols = sorted({k for c in curves for k in c})
        with open(out_dir / f"fit_{observable}_vs_{axis}_curves.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            w.writerows(curves)
    return report


def report(run_dir) -> dict:
    m = load_manifest(run_dir)
    counts = {}
    for p in m["points"]:
        counts[p["status"]] = counts.get(p["status"], 0) + 1
    failed = [{"id": p["id"], "error": p.get("error")} for p in m["points"] if p["status"] == "failed"]
    return {"config_hash": m["config_hash"], "model": m["config"]["model"]["model"],
            "status_counts": counts, "failed": failed}
