"""Size-scaling and rate-scaling fits of steady-state entanglement.

The central model is the crossover form ``f(L) = A L / (1 + C L^b)``: linear
below ``L0 = C^(-1/b)`` and ``(A/C) L^(1-b)`` above it. The regime follows
from ``b``: volume law (``b = 0`` or ``C = 0``), subvolume (``0 < b < 1``),
area law (``b >= 1``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.optimize import least_squares

from .errors import DegenerateData, InsufficientPoints, NoConvergence

C_MIN = 1e-8
B_VOLUME = 0.1
# fits whose b sits this close to 1 cannot tell an area law from a logarithm
LOG_AMBIGUITY_BAND = 0.15

VOLUME, SUBVOLUME, AREA, UNDETERMINED = "volume", "subvolume", "area", "undetermined"


def crossover_model(L, A, C, b):
    L = np.asarray(L, dtype=float)
    # L**b may overflow for wild trial parameters; the model then tends to 0
    with np.errstate(over="ignore"):
        return A * L / (1.0 + C * L**b)


def lorentzian_model(gamma, K, Q, beta):
    gamma = np.asarray(gamma, dtype=float)
    return K / (1.0 + Q * gamma**beta)


def _table(points, name="points"):
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] not in (2, 3):
        raise ValueError(f"{name} must be rows of (x, y[, stderr])")
    x, y = arr[:, 0], arr[:, 1]
    s = arr[:, 2] if arr.shape[1] == 3 else np.ones_like(y)
    if np.any(s <= 0):
        raise ValueError("standard errors must be positive")
    order = np.argsort(x, kind="stable")
    return x[order], y[order], s[order]


@dataclass
class FitResult:
    A: float
    C: float
    b: float
    covariance: np.ndarray
    residual_norm: float
    n_points: int
    b_fixed: bool
    L0: float
    regime: str
    reliable: bool
    L_max: float
    tags: tuple = ()

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, np.inf))

    @property
    def dof(self) -> int:
        return self.n_points - (2 if self.b_fixed else 3)

    @property
    def reduced_residual(self) -> float:
        return self.residual_norm / self.dof if self.dof > 0 else float("nan")

    def __call__(self, L):
        return crossover_model(L, self.A, self.C, self.b)

    def to_dict(self) -> dict:
        err = self.stderr
        return {
            "A": self.A, "C": self.C, "b": self.b,
            "A_err": float(err[0]), "C_err": float(err[1]), "b_err": float(err[2]),
            "covariance": self.covariance.tolist(),
            "residual_norm": self.residual_norm,
            "reduced_residual": self.reduced_residual,
            "n_points": self.n_points, "b_fixed": self.b_fixed,
            "L0": self.L0, "regime": self.regime, "reliable": self.reliable,
            "L_max": self.L_max, "tags": list(self.tags),
        }


def _linear_amplitude(g, y, w):
    den = np.sum(w * g * g)
    return float(np.sum(w * g * y) / den) if den > 0 else 0.0


def _covariance(jac, free):
    """``(J^T J)^-1`` on the free parameters, embedded in a 3x3 matrix."""
    j = jac[:, free]
    jtj = j.T @ j
    cov = np.zeros((3, 3))
    try:
        sub = np.linalg.inv(jtj)
        if not np.all(np.isfinite(sub)) or np.any(np.diag(sub) < 0):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        sub = np.linalg.pinv(jtj)
        sub[np.diag_indices_from(sub)] = np.where(np.diag(sub) > 0, np.diag(sub), np.inf)
    idx = np.flatnonzero(free)
    cov[np.ix_(idx, idx)] = sub
    return cov


def _crossover_length(C, b):
    if C <= 0 or b <= 0:
        return float("inf")
    with np.errstate(over="ignore"):
        return float(np.float64(C) ** (-1.0 / b))


def classify_regime(C, b, sigma_b, b_fixed=False) -> str:
    if C < C_MIN or b < B_VOLUME:
        return VOLUME
    if not np.isfinite(sigma_b) and not b_fixed:
        return UNDETERMINED
    return AREA if b >= 1.0 - (0.0 if b_fixed else sigma_b) else SUBVOLUME


def fit_scaling(points, fix_b: float | None = None, n_starts: int = 4) -> FitResult:
    """Weighted least-squares fit of ``A L / (1 + C L^b)``.

    Parameters
    ----------
    points : array_like
        Rows ``(L, S, stderr)``; the stderr column is optional (unit weights).
    fix_b : float, optional
        Hold ``b`` at this value; only ``A`` and ``C`` are fitted.
    n_starts : int
        Number of grid starts refined by the damped optimiser.

    The start grid spans ``C`` over six decades and ``b`` over ``[0.05, 2.5]``;
    for each grid node ``A`` is solved linearly. The best refined fit wins,
    ties going to the smaller ``b``.
    """
    L, S, s = _table(points)
    n_L = len(np.unique(L))
    if n_L < (3 if fix_b is not None else 4):
        raise InsufficientPoints(f"{n_L} distinct sizes are not enough")
    if np.any(S <= 0):
        raise ValueError("entropies must be positive")
    if np.ptp(S) == 0:
        raise DegenerateData("all entropies are equal")
    w = 1.0 / s**2

    def resid(p):
        A, C, b = p if fix_b is None else (p[0], p[1], fix_b)
        return (crossover_model(L, A, C, b) - S) / s

    c_grid = np.concatenate([[0.0], np.logspace(-5, 1, 13)])
    b_grid = [fix_b] if fix_b is not None else np.linspace(0.05, 2.5, 15)
    starts = []
    for C0, b0 in product(c_grid, b_grid):
        g = L / (1.0 + C0 * L**b0)
        A0 = max(_linear_amplitude(g, S, w), 1e-12)
        chi = float(np.sum(w * (A0 * g - S) ** 2))
        starts.append((chi, A0, C0, b0))
    starts.sort(key=lambda t: (t[0], t[3]))

    best = None
    for _, A0, C0, b0 in starts[:n_starts]:
        x0 = [A0, C0] if fix_b is not None else [A0, C0, b0]
        lo = np.zeros(len(x0))
        try:
            sol = least_squares(resid, x0, bounds=(lo, np.inf), method="trf",
                                x_scale="jac", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=5000)
        except ValueError:
            continue
        if sol.status <= 0:
            continue
        chi = float(np.sum(sol.fun**2))
        p = tuple(sol.x) if fix_b is None else (sol.x[0], sol.x[1], fix_b)
        key = (round(chi, 10), p[2])
        if best is None or key < best[0]:
            best = (key, chi, p)
    if best is None:
        raise NoConvergence("no start converged")
    _, chi, (A, C, b) = best

    free = np.array([True, True, fix_b is None])
    jac = _numeric_jacobian(lambda q: (crossover_model(L, *q) - S) / s, np.array([A, C, b]))
    cov = _covariance(jac, free)
    tags = []
    if C < C_MIN or b < B_VOLUME:
        # b carries no information once the power-law term is absent
        if fix_b is None:
            cov[2, :] = cov[:, 2] = 0.0
            cov[2, 2] = np.inf
        tags.append("b-unconstrained")
    sigma_b = float(np.sqrt(cov[2, 2])) if fix_b is None else 0.0
    regime = classify_regime(C, b, sigma_b, fix_b is not None)
    if regime != VOLUME and abs(b - 1.0) < max(LOG_AMBIGUITY_BAND, sigma_b):
        tags.append("area-or-log-ambiguous")
    L0 = _crossover_length(C, b)
    L_max = float(L.max())
    result = FitResult(float(A), float(C), float(b), cov, chi, len(L), fix_b is not None,
                       L0, regime, bool(L_max >= L0), L_max, tuple(tags))
    if b <= 1.0:
        grid = np.linspace(L.min(), L_max, 64)
        assert np.all(np.diff(result(grid)) >= -1e-12 * max(1.0, abs(A) * L_max)), "non-monotone fit"
    return result


def _numeric_jacobian(fun, p, rel=1e-7):
    f0 = fun(p)
    jac = np.empty((len(f0), len(p)))
    for k in range(len(p)):
        h = rel * max(abs(p[k]), 1e-6)
        up, dn = p.copy(), p.copy()
        up[k] += h
        dn[k] -= h
        jac[:, k] = (fun(up) - fun(dn)) / (2 * h)
    return jac


@dataclass
class LorentzianFit:
    K: float
    Q: float
    beta: float
    covariance: np.ndarray
    residual_norm: float
    n_points: int

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, np.inf))

    def __call__(self, gamma):
        return lorentzian_model(gamma, self.K, self.Q, self.beta)

    def to_dict(self) -> dict:
        err = self.stderr
        return {"K": self.K, "Q": self.Q, "beta": self.beta,
                "K_err": float(err[0]), "Q_err": float(err[1]), "beta_err": float(err[2]),
                "covariance": self.covariance.tolist(), "residual_norm": self.residual_norm,
                "n_points": self.n_points}


def fit_lorentzian(points, n_starts: int = 4) -> LorentzianFit:
    """Weighted fit of ``K / (1 + Q gamma^beta)``; ``K`` is the small-rate plateau."""
    g, S, s = _table(points)
    if len(np.unique(g)) < 4 or np.any(g <= 0) or g.max() / g.min() < 10:
        raise InsufficientPoints("need >= 4 positive rates spanning at least a decade")
    w = 1.0 / s**2

    def resid(p):
        return (lorentzian_model(g, *p) - S) / s

    starts = []
    for Q0, b0 in product(np.logspace(-3, 3, 13), np.linspace(0.25, 3.0, 12)):
        shape = 1.0 / (1.0 + Q0 * g**b0)
        K0 = max(_linear_amplitude(shape, S, w), 1e-12)
        starts.append((float(np.sum(w * (K0 * shape - S) ** 2)), K0, Q0, b0))
    starts.sort(key=lambda t: t[0])
    best = None
    for _, K0, Q0, b0 in starts[:n_starts]:
        sol = least_squares(resid, [K0, Q0, b0], bounds=(0, np.inf), method="trf",
                            x_scale="jac", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=5000)
        if sol.status <= 0:
            continue
        chi = float(np.sum(sol.fun**2))
        if best is None or chi < best[0]:
            best = (chi, sol.x)
    if best is None:
        raise NoConvergence("no start converged")
    chi, p = best
    jac = _numeric_jacobian(resid, np.array(p, dtype=float))
    cov = _covariance(jac, np.ones(3, dtype=bool))
    return LorentzianFit(float(p[0]), float(p[1]), float(p[2]), cov, chi, len(g))


@dataclass
class ParameterScalings:
    m: float
    x: float
    k: float
    mxk_covariance: np.ndarray
    y: float
    q: float
    yq_covariance: np.ndarray
    beta_slope: float
    beta_slope_err: float

    def to_dict(self) -> dict:
        return {
            "m": self.m, "x": self.x, "k": self.k,
            "x_err": float(np.sqrt(self.mxk_covariance[1, 1])),
            "y": self.y, "q": self.q,
            "y_err": float(np.sqrt(self.yq_covariance[0, 0])),
            "beta_slope": self.beta_slope, "beta_slope_err": self.beta_slope_err,
        }


def _weighted_line(x, y, s):
    """Straight-line fit with absolute weights: ``(slope, intercept), covariance``."""
    X = np.column_stack([x, np.ones_like(x)]) / s[:, None]
    coef, *_ = np.linalg.lstsq(X, y / s, rcond=None)
    return coef, np.linalg.inv(X.T @ X)


def fit_parameter_scalings(K_vs_L, Q_vs_L, beta_vs_L) -> ParameterScalings:
    """Size dependence of the Lorentzian parameters.

    ``K(L) = m L^x + k`` by nonlinear least squares, ``ln Q = y ln L + q`` by a
    straight line, and a linear slope of ``beta`` against ``L`` as the trend.
    """
    L, K, sK = _table(K_vs_L, "K_vs_L")
    LQ, Q, sQ = _table(Q_vs_L, "Q_vs_L")
    Lb, beta, sb = _table(beta_vs_L, "beta_vs_L")
    if min(len(np.unique(L)), len(np.unique(LQ)), len(np.unique(Lb))) < 4:
        raise InsufficientPoints("need at least four sizes")
    if np.any(Q <= 0):
        raise ValueError("Q must be positive for the logarithmic fit")

    def resid(p):
        return (p[0] * L ** p[1] + p[2] - K) / sK

    slope0 = np.polyfit(np.log(L), np.log(np.abs(K) + 1e-12), 1)[0]
    best = None
    for x0 in (slope0, 0.5, 1.0, 1.5):
        g = L**x0
        X = np.column_stack([g, np.ones_like(g)]) / sK[:, None]
        (m0, k0), *_ = np.linalg.lstsq(X, K / sK, rcond=None)
        sol = least_squares(resid, [m0, x0, k0], method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15,
                            max_nfev=20000)
        chi = float(np.sum(sol.fun**2))
        if sol.status > 0 and (best is None or chi < best[0]):
            best = (chi, sol.x)
    if best is None:
        raise NoConvergence("K(L) fit failed")
    p = best[1]
    cov = _covariance(_numeric_jacobian(resid, np.array(p)), np.ones(3, dtype=bool))
    (y, q), cov_q = _weighted_line(np.log(LQ), np.log(Q), sQ / Q)
    (bs, _), cov_b = _weighted_line(Lb, beta, sb)
    return ParameterScalings(float(p[0]), float(p[1]), float(p[2]), cov, float(y), float(q), cov_q,
                             float(bs), float(np.sqrt(cov_b[0, 0])))


@dataclass
class PowerLawFit:
    exponent: float
    prefactor: float
    stderr: float
    ci_low: float
    ci_high: float
    n_points: int


def fit_L0_powerlaw(points, gamma_max: float | None = None, n_boot: int = 2000, seed: int = 0,
                    level: float = 0.95) -> PowerLawFit:
    """Log-log slope of ``L0`` against ``gamma`` with a residual-bootstrap interval."""
    arr = np.asarray(points, dtype=float)
    g, L0 = arr[:, 0], arr[:, 1]
    keep = np.isfinite(L0) & (L0 > 0) & (g > 0)
    if gamma_max is not None:
        keep &= g < gamma_max
    if keep.sum() < 3:
        raise InsufficientPoints(f"{int(keep.sum())} usable points, need 3")
    x, y = np.log(g[keep]), np.log(L0[keep])
    slope, icpt = np.polyfit(x, y, 1)
    fitted = slope * x + icpt
    res = y - fitted
    n = len(x)
    rng = np.random.default_rng(seed)
    boot = np.empty(n_boot)
    for r in range(n_boot):
        boot[r] = np.polyfit(x, fitted + rng.choice(res, n, replace=True), 1)[0]
    lo, hi = np.quantile(boot, [(1 - level) / 2, (1 + level) / 2])
    se = float(np.sqrt(np.sum(res**2) / (n - 2) / np.sum((x - x.mean()) ** 2))) if n > 2 else float("nan")
    return PowerLawFit(float(slope), float(np.exp(icpt)), se, float(lo), float(hi), n)


@dataclass
class StabilitySweep:
    Lmin_grid: np.ndarray
    Lmax_grid: np.ndarray
    cells: list = field(repr=False)

    def b_surface(self) -> np.ndarray:
        return np.array([[c.b if isinstance(c, FitResult) else np.nan for c in row] for row in self.cells])

    def to_rows(self) -> list[dict]:
        rows = []
        for i, lmin in enumerate(self.Lmin_grid):
            for j, lmax in enumerate(self.Lmax_grid):
                c = self.cells[i][j]
                row = {"L_min": float(lmin), "L_max": float(lmax)}
                if isinstance(c, FitResult):
                    row.update(c.to_dict())
                else:
                    row["error"] = str(c)
                rows.append(row)
        return rows


def stability_sweep(points, Lmin_grid, Lmax_grid, fix_b: float | None = None) -> StabilitySweep:
    """Refit on every window ``L_min <= L <= L_max``.

    Cells without enough sizes hold the exception that the fit raised instead
    of a :class:`FitResult`.
    """
    L, S, s = _table(points)
    lo, hi = L.min(), L.max()
    for v in list(Lmin_grid) + list(Lmax_grid):
        if v < lo or v > hi:
            raise ValueError(f"grid value {v} outside the data range [{lo}, {hi}]")
    cells = []
    for lmin in Lmin_grid:
        row = []
        for lmax in Lmax_grid:
            sel = (L >= lmin) & (L <= lmax)
            try:
                row.append(fit_scaling(np.column_stack([L[sel], S[sel], s[sel]]), fix_b=fix_b))
            except (InsufficientPoints, DegenerateData, NoConvergence) as exc:
                row.append(exc)
        cells.append(row)
    return StabilitySweep(np.asarray(Lmin_grid, dtype=float), np.asarray(Lmax_grid, dtype=float), cells)


def curve_samples(fit: FitResult, L_lo: float, L_hi: float, n: int = 128) -> dict:
    """Fitted curve plus the linear and power-law asymptotes, for plotting."""
    grid = np.geomspace(L_lo, L_hi, n)
    out = {"L": grid, "fit": fit(grid), "linear": fit.A * grid}
    out["powerlaw"] = fit.A / fit.C * grid ** (1 - fit.b) if fit.C > 0 else np.full(n, np.nan)
    return out
