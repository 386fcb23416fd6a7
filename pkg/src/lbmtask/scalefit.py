"""Linear least-squares fits of the weak- and strong-scaling time models.

Weak scaling:   T(n) / T_ref = tau0 + mu * n
Strong scaling: T(n) / T_ref = tau0 / n + beta + eta * (n - 1)

Both are linear in their parameters, so a (optionally sigma-weighted)
linear least-squares solve is exact on model data. Parameter covariances
are scaled by the reduced chi-square, i.e. by the residual variance.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class ScalePoint:
    n: float
    t_norm: float
    sigma: float | None = None

    def __post_init__(self):
        if self.n < 1:
            raise FitError(f"core count must be >= 1, got {self.n}")
        if not self.t_norm > 0:
            raise FitError(f"normalized time must be positive, got {self.t_norm}")
        if self.sigma is not None and not self.sigma > 0:
            raise FitError("sigma must be positive when given")


@dataclass(frozen=True)
class WeakFit:
    tau0: float
    mu: float
    covariance: np.ndarray
    residual_rms: float = 0.0

    @property
    def tau0_err(self) -> float:
        return math.sqrt(self.covariance[0, 0])

    @property
    def mu_err(self) -> float:
        return math.sqrt(self.covariance[1, 1])

    def __call__(self, n):
        return self.tau0 + self.mu * np.asarray(n, dtype=float)


@dataclass(frozen=True)
class StrongFit:
    tau0: float
    beta: float
    eta: float
    covariance: np.ndarray
    residual_rms: float = 0.0

    @property
    def errors(self) -> tuple[float, float, float]:
        return tuple(math.sqrt(v) for v in np.diag(self.covariance))

    def __call__(self, n):
        n = np.asarray(n, dtype=float)
        return self.tau0 / n + self.beta + self.eta * (n - 1)


def _as_points(points) -> list[ScalePoint]:
    out = []
    for p in points:
        if isinstance(p, ScalePoint):
            out.append(p)
        else:
            out.append(ScalePoint(*p))
    return out


def _lstsq(design: np.ndarray, y: np.ndarray, sigma: np.ndarray | None):
    if sigma is not None:
        design = design / sigma[:, None]
        y = y / sigma
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise FitError("design matrix is rank deficient")
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    dof = len(y) - design.shape[1]
    scale = float(resid @ resid) / dof if dof > 0 else 0.0
    cov = np.linalg.inv(design.T @ design) * scale
    return coef, cov, math.sqrt(float(resid @ resid) / len(y))


def _arrays(points: Sequence[ScalePoint]):
    n = np.array([p.n for p in points], dtype=float)
    t = np.array([p.t_norm for p in points], dtype=float)
    sig = [p.sigma for p in points]
    if any(s is None for s in sig):
        return n, t, None
    return n, t, np.array(sig, dtype=float)


def fit_weak(points: Iterable, keep: Callable[[ScalePoint], bool] | None = None) -> WeakFit:
    """Fit ``tau0 + mu * n``. ``keep`` optionally filters the points first."""
    pts = [p for p in _as_points(points) if keep is None or keep(p)]
    if len({p.n for p in pts}) < 2:
        raise FitError("the weak-scaling model needs at least two distinct core counts")
    n, t, sig = _arrays(pts)
    coef, cov, rms = _lstsq(np.column_stack([np.ones_like(n), n]), t, sig)
    return WeakFit(float(coef[0]), float(coef[1]), cov, rms)


def fit_strong(points: Iterable, keep: Callable[[ScalePoint], bool] | None = None) -> StrongFit:
    """Fit ``tau0 / n + beta + eta * (n - 1)``."""
    pts = [p for p in _as_points(points) if keep is None or keep(p)]
    if len({p.n for p in pts}) < 3:
        raise FitError("the strong-scaling model needs at least three distinct core counts")
    n, t, sig = _arrays(pts)
    coef, cov, rms = _lstsq(np.column_stack([1.0 / n, np.ones_like(n), n - 1.0]), t, sig)
    return StrongFit(float(coef[0]), float(coef[1]), float(coef[2]), cov, rms)


def powers_of_two(p: ScalePoint) -> bool:
    """Point filter keeping only core counts that are powers of two."""
    n = int(p.n)
    return n == p.n and n > 0 and n & (n - 1) == 0


def doubling_cores(fit: WeakFit) -> float:
    """Core count at which the weak-scaling time reaches twice the reference.

    Returns ``math.inf`` when the time never grows (``mu <= 0``).
    """
    if fit.mu <= 0:
        return math.inf
    return (2.0 - fit.tau0) / fit.mu


def ratio_with_error(a: float, a_err: float, b: float, b_err: float) -> tuple[float, float]:
    """``a / b`` with first-order propagated uncertainty."""
    r = a / b
    return r, abs(r) * math.hypot(a_err / a, b_err / b)


def read_points(path, ref_seconds: float | None = None) -> list[ScalePoint]:
    """Load points from a benchmark CSV or a minimal ``n,t_norm[,sigma]`` CSV.

    For benchmark CSVs the core count is ``ranks * workers`` (``ranks`` in
    serial mode) and times are normalized by ``ref_seconds``, defaulting to
    the time of the smallest core count.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise FitError(f"{path} holds no data")
    header = [h.strip() for h in rows[0]]
    if "seconds" in header:
        idx = {h: i for i, h in enumerate(header)}
        raw = []
        for r in rows[1:]:
            cores = int(r[idx["ranks"]])
            if r[idx["mode"]] != "serial":
                cores *= int(r[idx["workers"]])
            raw.append((cores, float(r[idx["seconds"]])))
        if ref_seconds is None:
            ref_seconds = min(raw)[1]
        return [ScalePoint(n, s / ref_seconds) for n, s in raw]
    body = rows[1:] if not _is_number(rows[0][0]) else rows
    pts = []
    for r in body:
        vals = [float(v) for v in r[:3]]
        t = vals[1] / ref_seconds if ref_seconds else vals[1]
        sigma = vals[2] / ref_seconds if len(vals) > 2 and ref_seconds else (vals[2] if len(vals) > 2 else None)
        pts.append(ScalePoint(vals[0], t, sigma))
    return pts


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def format_fit(fit: WeakFit | StrongFit) -> str:
    """``key=value`` lines with parameters, covariance and derived numbers."""
    lines = []
    if isinstance(fit, WeakFit):
        lines += [f"model=weak", f"tau0={fit.tau0!r}", f"mu={fit.mu!r}",
                  f"tau0_err={fit.tau0_err!r}", f"mu_err={fit.mu_err!r}",
                  f"doubling_cores={doubling_cores(fit)!r}"]
        names = ("tau0", "mu")
    else:
        e = fit.errors
        lines += [f"model=strong", f"tau0={fit.tau0!r}", f"beta={fit.beta!r}", f"eta={fit.eta!r}",
                  f"tau0_err={e[0]!r}", f"beta_err={e[1]!r}", f"eta_err={e[2]!r}"]
        names = ("tau0", "beta", "eta")
    for i, a in enumerate(names):
        for j, b in enumerate(names):
            if j >= i:
                lines.append(f"cov_{a}_{b}={float(fit.covariance[i, j])!r}")
    lines.append(f"residual_rms={fit.residual_rms!r}")
    return "\n".join(lines) + "\n"
