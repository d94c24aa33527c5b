"""
Maximal solutions of rho' = g(rho), rho(0) = a, for the built-in Osgood rates
g(x) = K x (linear) and g(x) = K x (1 + |log x|) (loglinear).

Integration runs on y = log rho, where both rates become affine in |y|.
"""
import logging
from typing import Union

import numpy as np
from scipy.integrate import solve_ivp

from analysis.models import OsgoodSpec
from common.errors import InvalidArgumentError, LabError
from config import settings

logger = logging.getLogger(__name__)

ODE_ATOL = 1e-12

ArrayLike = Union[float, np.ndarray]


def _check_times(spec: OsgoodSpec, t: np.ndarray) -> None:
    if np.any(~np.isfinite(t)) or np.any(t < 0.0) or np.any(t > spec.T * (1.0 + 1e-12)):
        raise InvalidArgumentError("t must lie in [0, T]", T=spec.T)


def _log_rate(spec: OsgoodSpec):
    if spec.rate == "linear":
        return lambda s, y: [spec.K]
    return lambda s, y: [spec.K * (1.0 + abs(y[0]))]


def _solve(spec: OsgoodSpec, t0: float, y0: float, t_eval: np.ndarray, events=None):
    result = solve_ivp(
        _log_rate(spec),
        (t0, float(t_eval[-1])),
        [y0],
        method="DOP853",
        t_eval=t_eval,
        rtol=settings.ODE_RTOL,
        atol=ODE_ATOL,
        events=events,
    )
    if result.status == -1:
        logger.error("Majorant integration failed: %s", result.message)
        raise LabError("majorant integration failed", message=result.message)
    return result


def _integrate_log(spec: OsgoodSpec, times: np.ndarray) -> np.ndarray:
    """log rho at the sorted, distinct times."""
    y0 = float(np.log(spec.a))
    out = np.full(times.shape, y0)
    live = times > 0.0
    if not live.any():
        return out
    t_eval = times[live]
    if spec.rate == "linear" or y0 >= 0.0:
        out[live] = _solve(spec, 0.0, y0, t_eval).y[0]
        return out

    # |y| has a kink at rho = 1, reached at t_star; restart the integration there
    t_star = float(np.log1p(-y0) / spec.K)
    values = np.empty(t_eval.shape)
    below = t_eval <= t_star
    if below.any():
        values[below] = _solve(spec, 0.0, y0, t_eval[below]).y[0]
    if not below.all():
        values[~below] = _solve(spec, t_star, 0.0, t_eval[~below]).y[0]
    out[live] = values
    return out


def osgood_majorant(spec: OsgoodSpec, t: ArrayLike) -> ArrayLike:
    """Maximal solution rho(t) of rho' = g(rho), rho(0) = a; zero when a = 0."""
    t_arr = np.asarray(t, dtype=float)
    flat = np.atleast_1d(t_arr).ravel()
    _check_times(spec, flat)
    if spec.a == 0.0:
        out = np.zeros(flat.shape)
    else:
        times, inverse = np.unique(flat, return_inverse=True)
        out = np.exp(_integrate_log(spec, times))[inverse]
    if t_arr.ndim == 0:
        return float(out[0])
    return out.reshape(t_arr.shape)


def osgood_closed_form(spec: OsgoodSpec, t: ArrayLike) -> ArrayLike:
    """Closed form of the maximal solution, used as an oracle for osgood_majorant."""
    t_arr = np.asarray(t, dtype=float)
    _check_times(spec, np.atleast_1d(t_arr))
    if spec.a == 0.0:
        out = np.zeros(t_arr.shape)
    elif spec.rate == "linear":
        out = spec.a * np.exp(spec.K * t_arr)
    else:
        y0 = np.log(spec.a)
        if y0 >= 0.0:
            y = (1.0 + y0) * np.exp(spec.K * t_arr) - 1.0
        else:
            t_star = np.log(1.0 - y0) / spec.K
            below = 1.0 - (1.0 - y0) * np.exp(-spec.K * t_arr)
            above = np.exp(spec.K * (t_arr - t_star)) - 1.0
            y = np.where(t_arr <= t_star, below, above)
        out = np.exp(y)
    return float(out) if t_arr.ndim == 0 else out


def osgood_G(spec: OsgoodSpec, x: ArrayLike) -> ArrayLike:
    """G(x) = integral of dy / g(y) from x to 1."""
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr <= 0.0):
        raise InvalidArgumentError("G is defined for x > 0")
    log_x = np.log(x_arr)
    if spec.rate == "linear":
        out = -log_x / spec.K
    else:
        out = np.where(log_x <= 0.0, np.log1p(-np.minimum(log_x, 0.0)), -np.log1p(np.maximum(log_x, 0.0))) / spec.K
    return float(out) if x_arr.ndim == 0 else out
