"""Context-calibrated compression: fit, evaluate, and invert the quality curve.

The degradation a context tolerates is modeled by a two-parameter family.
A per-context steepness k = alpha * NLL(c) + beta (clamped below at k_min)
sets the shape of

    f(r) = (exp(r*k - k) - exp(-k)) / (1 - exp(-k))

which is strictly increasing in the retention rate r with exact endpoints
f(0) = 0, f(1) = 1. Internally f is evaluated as
exp((r-1)k) * expm1(-r*k) / expm1(-k) so neither large nor tiny k
overflows or cancels. Given a quality budget tau, the smallest viable
retention has the closed form

    r*(c, tau) = 1 + ln(tau + (1 - tau) * exp(-k)) / k

(algebraically the inverse of f), clamped to (0, 1].

Fitting minimizes an asymmetric squared loss over observed
(r, NLL(c), y) triples: residuals where the curve over-predicts quality
(f > y) are up-weighted by ``under_penalty``, because optimism there
drives under-estimation of the retention a context actually needs. The
optimizer is a damped Gauss-Newton iteration multi-started from a coarse
(alpha, beta) grid; NLL values always arrive from files, never from a
model run here.
"""

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DataError, DegenerateFitError, FormatError, ParameterError

_GRID_ALPHA = (-2.0, -1.0, -0.5, -0.1, 0.0, 0.1, 0.5, 1.0, 2.0)
_GRID_BETA = (0.05, 0.1, 0.3, 1.0, 3.0, 10.0, 30.0)


@dataclass(frozen=True)
class CalibTriple:
    """One observation: retention r, context NLL, observed NLL ratio y."""

    r: float
    nll_c: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.r) and 0.0 < self.r <= 1.0):
            raise DataError(f"r must be in (0, 1], got {self.r}")
        if not (math.isfinite(self.nll_c) and self.nll_c >= 0.0):
            raise DataError(f"nll_c must be finite and >= 0, got {self.nll_c}")
        if not (math.isfinite(self.y) and self.y > 0.0):
            raise DataError(f"y must be finite and positive, got {self.y}")


@dataclass(frozen=True)
class CalibrationModel:
    """Fitted curve parameters plus fit diagnostics."""

    alpha: float
    beta: float
    k_min: float = 1e-3
    fit_rmse: float = 0.0
    n_points: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.k_min) and self.k_min > 0.0):
            raise ParameterError(f"k_min must be positive, got {self.k_min}")
        if not (math.isfinite(self.alpha) and math.isfinite(self.beta)):
            raise ParameterError("alpha and beta must be finite")


def _steepness(nll_c: float, model: CalibrationModel) -> float:
    return max(model.alpha * nll_c + model.beta, model.k_min)


def calib_value(r: float, nll_c: float, model: CalibrationModel) -> float:
    """Predicted NLL ratio when retaining fraction r of a context with the given NLL."""
    if not 0.0 <= r <= 1.0:
        raise ParameterError(f"r must be in [0, 1], got {r}")
    k = _steepness(nll_c, model)
    return math.exp((r - 1.0) * k) * math.expm1(-r * k) / math.expm1(-k)


def invert_retention(nll_c: float, tau: float, model: CalibrationModel) -> float:
    """Smallest retention rate whose predicted quality reaches tau (closed form)."""
    if not 0.0 < tau <= 1.0:
        raise ParameterError(f"tau must be in (0, 1], got {tau}")
    k = _steepness(nll_c, model)
    r = 1.0 + math.log(tau + (1.0 - tau) * math.exp(-k)) / k
    return min(1.0, max(r, 1e-12))


def _curve(rs: np.ndarray, ks: np.ndarray) -> np.ndarray:
    return np.exp((rs - 1.0) * ks) * np.expm1(-rs * ks) / np.expm1(-ks)


def _curve_dk(rs: np.ndarray, ks: np.ndarray):
    """f and df/dk, written in overflow-free form (all exponents <= 0)."""
    a = np.exp((rs - 1.0) * ks) * (-np.expm1(-rs * ks))
    b = -np.expm1(-ks)
    da = (rs - 1.0) * a + rs * np.exp(-ks)
    db = np.exp(-ks)
    f = a / b
    return f, (da * b - a * db) / (b * b)


def _objective(ab, rs, nlls, ys, k_min, penalty):
    ks = np.maximum(ab[0] * nlls + ab[1], k_min)
    res = _curve(rs, ks) - ys
    w = np.where(res > 0, penalty, 1.0)
    return res, w, float((w * res * res).sum())


def fit_calibration(
    triples,
    under_penalty: float = 4.0,
    k_min: float = 1e-3,
    max_iter: int = 200,
) -> CalibrationModel:
    """Fit (alpha, beta) by damped Gauss-Newton with coarse-grid multi-start.

    Parameters
    ----------
    triples : sequence of CalibTriple
        Needs at least two observations with two distinct retention rates.
    under_penalty : float
        Weight on residuals where the curve over-predicts quality; >= 1.
        1.0 gives the symmetric least-squares fit.
    """
    triples = list(triples)
    if under_penalty < 1.0:
        raise ParameterError(f"under_penalty must be >= 1, got {under_penalty}")
    rs = np.array([t.r for t in triples])
    if rs.size < 2 or np.unique(rs).size < 2:
        raise DegenerateFitError("need at least 2 triples with 2 distinct retention rates")
    nlls = np.array([t.nll_c for t in triples])
    ys = np.array([t.y for t in triples])

    starts = sorted(
        ((a, b) for a in _GRID_ALPHA for b in _GRID_BETA),
        key=lambda ab: _objective(np.array(ab), rs, nlls, ys, k_min, under_penalty)[2],
    )[:3]

    best = None
    best_last = None
    for start in starts:
        ab = np.array(start, dtype=np.float64)
        res, w, obj = _objective(ab, rs, nlls, ys, k_min, under_penalty)
        mu = 1e-3
        converged = False
        for _ in range(max_iter):
            ks_raw = ab[0] * nlls + ab[1]
            ks = np.maximum(ks_raw, k_min)
            _, dfdk = _curve_dk(rs, ks)
            live = (ks_raw > k_min).astype(np.float64)
            jac = np.stack([dfdk * nlls * live, dfdk * live], axis=1)
            jtj = (jac * w[:, None]).T @ jac
            g = jac.T @ (w * res)
            try:
                step = np.linalg.solve(jtj + mu * np.eye(2), -g)
            except np.linalg.LinAlgError:
                step = -g
            new_ab = ab + step
            new_res, new_w, new_obj = _objective(new_ab, rs, nlls, ys, k_min, under_penalty)
            if new_obj <= obj:
                moved = np.abs(step).max()
                ab, res, w, obj = new_ab, new_res, new_w, new_obj
                mu = max(mu * 0.3, 1e-12)
                if moved < 1e-13 * (1.0 + np.abs(ab).max()):
                    converged = True
                    break
            else:
                mu *= 10.0
                if mu > 1e12:
                    converged = obj < 1e-30 or np.abs(g).max() < 1e-10 * (1.0 + obj)
                    break
        candidate = (obj, float(ab[0]), float(ab[1]))
        if best_last is None or candidate < best_last:
            best_last = candidate
        if converged and (best is None or candidate < best):
            best = candidate

    chosen = best if best is not None else None
    if chosen is None:
        obj, alpha, beta = best_last
        res, _, _ = _objective(np.array([alpha, beta]), rs, nlls, ys, k_min, under_penalty)
        partial = CalibrationModel(alpha, beta, k_min, float(np.sqrt(np.mean(res * res))), rs.size)
        raise ConvergenceError(f"no start converged within {max_iter} iterations", model=partial)
    obj, alpha, beta = chosen
    res, _, _ = _objective(np.array([alpha, beta]), rs, nlls, ys, k_min, under_penalty)
    return CalibrationModel(
        alpha=alpha,
        beta=beta,
        k_min=k_min,
        fit_rmse=float(np.sqrt(np.mean(res * res))),
        n_points=rs.size,
    )


def load_triples(path) -> list:
    """Parse a CSV of training triples with header ``r,nll_c,y``."""
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file, expected header r,nll_c,y") from None
        if [c.strip() for c in header] != ["r", "nll_c", "y"]:
            raise FormatError(f"{path}: expected header r,nll_c,y, got {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise FormatError(f"{path}: line {lineno}: expected 3 fields, got {len(row)}")
            try:
                r, nll_c, y = (float(x) for x in row)
            except ValueError as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from exc
            try:
                out.append(CalibTriple(r=r, nll_c=nll_c, y=y))
            except DataError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from exc
    return out


def save_model(model: CalibrationModel, path) -> None:
    doc = {
        "alpha": model.alpha,
        "beta": model.beta,
        "k_min": model.k_min,
        "fit_rmse": model.fit_rmse,
        "n_points": model.n_points,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_model(path) -> CalibrationModel:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    try:
        return CalibrationModel(
            alpha=doc["alpha"],
            beta=doc["beta"],
            k_min=doc["k_min"],
            fit_rmse=doc["fit_rmse"],
            n_points=doc["n_points"],
        )
    except KeyError as exc:
        raise FormatError(f"{path}: missing model key {exc}") from exc
