"""Small statistics helpers shared by the generators and the studies."""

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError, ValidationError


def jackknife(samples, statistic=np.mean):
    """Leave-one-out jackknife estimate and standard error.

    ``samples`` is indexed along axis 0 by realization; ``statistic`` maps a
    stack of samples to a scalar (or array).  Returns ``(estimate, stderr)``
    where ``estimate`` is the full-sample statistic.
    """
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[0]
    if n < 2:
        raise InsufficientDataError(f"jackknife needs at least 2 samples, got {n}")
    full = statistic(samples)
    if statistic is np.mean:
        # closed form of the leave-one-out sum for the mean
        total = samples.sum(axis=0)
        loo = (total[None, ...] - samples) / (n - 1)
    else:
        loo = np.stack([statistic(np.delete(samples, i, axis=0)) for i in range(n)])
    spread = loo - loo.mean(axis=0)
    stderr = np.sqrt((n - 1) / n * np.sum(spread**2, axis=0))
    return full, stderr


@dataclass(frozen=True)
class LogLogFit:
    slope: float
    intercept: float
    slope_stderr: float

    def predict(self, x):
        return np.exp(self.intercept) * np.asarray(x, dtype=float) ** self.slope


def fit_loglog(x, y, yerr=None):
    """Least-squares fit of ``log y = intercept + slope * log x``.

    With ``yerr`` the fit is weighted by the propagated log-errors
    ``yerr / y`` and the slope error follows from those weights; otherwise it
    is estimated from the residuals.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 2:
        raise ValidationError("need at least two (x, y) pairs of equal length")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValidationError("log-log fit requires positive data")
    lx, ly = np.log(x), np.log(y)
    if np.ptp(lx) == 0:
        raise ValidationError("degenerate ladder: all x values coincide")
    if yerr is not None:
        sig = np.asarray(yerr, dtype=float) / y
        sig = np.where(sig > 0, sig, np.min(sig[sig > 0]) if np.any(sig > 0) else 1.0)
        w = 1.0 / sig**2
    else:
        w = np.ones_like(lx)
    xm = np.sum(w * lx) / np.sum(w)
    ym = np.sum(w * ly) / np.sum(w)
    sxx = np.sum(w * (lx - xm) ** 2)
    slope = np.sum(w * (lx - xm) * (ly - ym)) / sxx
    intercept = ym - slope * xm
    if yerr is not None:
        se = np.sqrt(1.0 / sxx)
    elif x.size > 2:
        resid = ly - intercept - slope * lx
        se = np.sqrt(np.sum(resid**2) / (x.size - 2) / sxx)
    else:
        se = float("nan")
    return LogLogFit(float(slope), float(intercept), float(se))
