"""Stretched-exponential fits, instantaneous exponents and ensemble statistics."""

import csv
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import least_squares
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

N_BOUNDS = (0.2, 6.0)
N_INIT = 1.5
FLOOR = 1e-3
TAIL_CUTOFF = 1e-2  # the window ends where |L| first drops below this
MIN_POINTS = 8


class InsufficientDecayError(ValueError):
    pass


@dataclass
class FitResult:
    T2: float
    n: float
    covariance: np.ndarray
    fit_window: tuple
    quality: float
    t_1e: Optional[float] = None
    extrapolated: bool = False

    @property
    def T2_err(self) -> float:
        # covariance is in (log T2, n); propagate to T2
        return float(self.T2 * np.sqrt(max(self.covariance[0, 0], 0.0)))

    @property
    def n_err(self) -> float:
        return float(np.sqrt(max(self.covariance[1, 1], 0.0)))


def _curve_arrays(curve, values=None):
    if values is None:
        t, v = curve.times, curve.values
    else:
        t, v = curve, values
    return np.asarray(t, dtype=float), np.abs(np.asarray(v))


def one_over_e_time(times, magnitude) -> Optional[float]:
    """First crossing of 1/e, interpolated linearly in log time."""
    target = np.exp(-1)
    below = np.flatnonzero(magnitude < target)
    if not len(below):
        return None
    i = below[0]
    if i == 0:
        return float(times[0])
    t0, t1 = times[i - 1], times[i]
    y0, y1 = magnitude[i - 1], magnitude[i]
    frac = (y0 - target) / (y0 - y1)
    if t0 > 0:
        return float(np.exp(np.log(t0) + frac * (np.log(t1) - np.log(t0))))
    return float(t0 + frac * (t1 - t0))


def fit_stretched(curve, values=None, window=None, tail=TAIL_CUTOFF) -> FitResult:
    """Fit |L(t)| = exp(-(t/T2)^n) by least squares on log|L|.

    Accepts a :class:`CoherenceCurve` or ``(times, values)``. The window
    stops at the first point below ``tail``, so the post-decay noise floor
    does not enter; points with |L| < 1e-3 or t <= 0 are ignored. The fit runs in time units of the
    initial guess (the 1/e crossing), which makes it exactly equivariant
    under rescaling of the time axis.
    """
    t, mag = _curve_arrays(curve, values)
    if window is not None:
        sel = (t >= window[0]) & (t <= window[1])
        t, mag = t[sel], mag[sel]
    if not len(t) or mag.min() >= 0.9:
        raise InsufficientDecayError("coherence never drops below 0.9; extend t_max")
    below = np.flatnonzero(mag < tail)
    if len(below):
        t, mag = t[: below[0] + 1], mag[: below[0] + 1]
    keep = (t > 0) & (mag >= FLOOR)
    t, mag = t[keep], mag[keep]
    if len(t) < MIN_POINTS:
        raise ValueError(f"need at least {MIN_POINTS} usable points, got {len(t)}")
    t_1e = one_over_e_time(t, mag)
    extrapolated = t_1e is None
    if extrapolated:
        # decay never reaches 1/e: start from the single-point estimate at the last time
        t0 = float(t[-1] * (-np.log(mag[-1])) ** (-1 / N_INIT))
    else:
        t0 = t_1e
    s = t / t0
    y = np.log(mag)

    def resid(p):
        return y + (s * np.exp(-p[0])) ** p[1]

    sol = least_squares(
        resid,
        x0=[0.0, N_INIT],
        bounds=([-np.inf, N_BOUNDS[0]], [np.inf, N_BOUNDS[1]]),
        method="trf",
        xtol=1e-14,
        ftol=1e-14,
        gtol=1e-14,
    )
    J = sol.jac
    dof = max(1, len(t) - 2)
    s2 = float(sol.fun @ sol.fun) / dof
    try:
        cov = np.linalg.inv(J.T @ J) * s2
    except np.linalg.LinAlgError:
        cov = np.full((2, 2), np.inf)
    return FitResult(
        T2=float(t0 * np.exp(sol.x[0])),
        n=float(sol.x[1]),
        covariance=cov,
        fit_window=(float(t[0]), float(t[-1])),
        quality=float(np.sqrt(np.mean(sol.fun**2))),
        t_1e=t_1e,
        extrapolated=extrapolated,
    )


def stretched_exp(t, T2, n):
    return np.exp(-((np.asarray(t, dtype=float) / T2) ** n))


@dataclass
class InstantaneousExponent:
    times: np.ndarray
    n: np.ndarray
    undefined: bool = False


def instantaneous_exponent(curve, values=None, window=5) -> InstantaneousExponent:
    """d log(-log|L|) / d log t from a sliding local quadratic fit.

    Only points with 1e-3 <= |L| < 1 enter. Returns an empty result flagged
    ``undefined`` when fewer than ``window`` such points exist.
    """
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be an odd integer >= 3")
    t, mag = _curve_arrays(curve, values)
    ok = (t > 0) & (mag >= FLOOR) & (mag < 1 - 1e-12)
    t, mag = t[ok], mag[ok]
    if len(t) < window:
        return InstantaneousExponent(np.array([]), np.array([]), True)
    x = np.log(t)
    y = np.log(-np.log(mag))
    half = window // 2
    out_t, out_n = [], []
    for i in range(half, len(t) - half):
        xs = x[i - half : i + half + 1] - x[i]
        coef = np.polyfit(xs, y[i - half : i + half + 1], 2)
        out_t.append(t[i])
        out_n.append(coef[1])
    return InstantaneousExponent(np.array(out_t), np.array(out_n))


@dataclass
class EnsembleStats:
    mean_T2: float
    std_T2: float
    mean_n: float
    std_n: float
    n_configs: int
    per_config: list = field(default_factory=list)
    mean_curve: Optional[np.ndarray] = None
    n_failed: int = 0

    def summary(self) -> dict:
        return {
            "mean_T2_us": self.mean_T2,
            "std_T2_us": self.std_T2,
            "mean_n": self.mean_n,
            "std_n": self.std_n,
            "n_configs": self.n_configs,
            "n_failed": self.n_failed,
        }

    def to_json(self, path, **extra):
        with open(path, "w") as fh:
            json.dump({**self.summary(), **extra}, fh, indent=2, sort_keys=True)


def aggregate(results: Sequence[Optional[FitResult]], curves=None) -> EnsembleStats:
    """Sample statistics (ddof = 1) over successful fits; failed fits are counted."""
    good = [r for r in results if r is not None]
    if not good:
        raise ValueError("no successful fits to aggregate")
    T2 = np.array([r.T2 for r in good])
    n = np.array([r.n for r in good])
    ddof = 1 if len(good) > 1 else 0
    mean_curve = None
    if curves is not None and len(curves):
        mean_curve = np.mean([np.asarray(getattr(c, "values", c)) for c in curves], axis=0)
    return EnsembleStats(
        mean_T2=float(T2.mean()),
        std_T2=float(T2.std(ddof=ddof)),
        mean_n=float(n.mean()),
        std_n=float(n.std(ddof=ddof)),
        n_configs=len(good),
        per_config=list(results),
        mean_curve=mean_curve,
        n_failed=len(results) - len(good),
    )


def write_fit_report(path, results: Sequence[Optional[FitResult]], ids=None):
    ids = list(range(len(results))) if ids is None else list(ids)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["config_id", "T2_us", "n", "T2_err", "n_err", "quality", "t_1e_us"])
        for cid, r in zip(ids, results):
            if r is None:
                w.writerow([cid, "nan", "nan", "nan", "nan", "nan", "nan"])
            else:
                w.writerow([cid, repr(r.T2), repr(r.n), repr(r.T2_err), repr(r.n_err), repr(r.quality), repr(r.t_1e)])


class StretchedExponentialRegressor(BaseEstimator, RegressorMixin):
    """Estimator wrapper: ``fit(t, |L|)`` learns ``T2_`` and ``n_``; ``predict(t)`` returns the model."""

    def __init__(self, window=None):
        self.window = window

    def fit(self, X, y):
        t = np.asarray(X, dtype=float).reshape(-1)
        order = np.argsort(t)
        self.result_ = fit_stretched(t[order], np.asarray(y)[order], window=self.window)
        self.T2_ = self.result_.T2
        self.n_ = self.result_.n
        return self

    def predict(self, X):
        check_is_fitted(self, "result_")
        return stretched_exp(np.asarray(X, dtype=float).reshape(-1), self.T2_, self.n_)
