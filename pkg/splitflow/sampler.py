"""Samplers integrating from the prior (t=1) back to data (t=0).

Both samplers step backwards in time, ``z_{t-h} = z_t - h * velocity``.
``euler_sample`` uses instantaneous velocities, ``few_step_sample`` uses
average velocities over each grid interval.
"""
import logging

import numpy as np

from .base_classes import PoisonedStateError, SplitflowInputError
from .model import cfg_velocity

__all__ = ["make_grid", "parse_grid", "euler_sample", "few_step_sample"]
mod_logger = logging.getLogger(__name__)


def make_grid(k):
    """Uniform descending grid ``1 = t_0 > ... > t_k = 0``.

    Examples
    --------
    >>> make_grid(2).tolist()
    [1.0, 0.5, 0.0]
    """
    if int(k) != k or k < 1:
        raise SplitflowInputError("number of steps must be a positive integer.")
    return np.linspace(1.0, 0.0, int(k) + 1)


def parse_grid(grid, k):
    """Resolve a grid setting: 'uniform', a comma list, or a sequence.

    Parameters
    ----------
    grid : str or sequence of float or None
        'uniform' (or None) builds a uniform grid of ``k`` steps. Explicit
        grids must start at 1, end at 0 and strictly decrease.

    k : int
        Number of steps for the uniform grid

    Returns
    -------
    numpy.ndarray

    Examples
    --------
    >>> parse_grid("1.0,0.4,0.0", 2).tolist()
    [1.0, 0.4, 0.0]
    """
    if grid is None or (isinstance(grid, str) and grid.strip() == "uniform"):
        return make_grid(k)
    if isinstance(grid, str):
        try:
            grid = [float(v) for v in grid.split(",")]
        except ValueError:
            raise SplitflowInputError(
                "grid must be 'uniform' or a comma separated list of times."
            )
    grid = np.asarray(grid, dtype=np.float64)
    if (
        grid.ndim != 1
        or grid.size < 2
        or grid[0] != 1.0
        or grid[-1] != 0.0
        or np.any(np.diff(grid) >= 0)
    ):
        raise SplitflowInputError(
            "grid must strictly decrease from 1.0 to 0.0, got {g!r}".format(
                g=grid.tolist()
            )
        )
    return grid


def _check_state(z, where):
    if not np.all(np.isfinite(z)):
        raise PoisonedStateError(where)


def euler_sample(field, n_steps, eps, cond=None, cfg_scale=None):
    """Integrate ``dz/dt = v(z, t)`` from t=1 to t=0 with uniform Euler steps.

    Parameters
    ----------
    field : VelocityNet, TeacherHandle or AnalyticField
        Anything with ``velocity(z, t, cond)``

    n_steps : int
        Number of Euler steps, one velocity evaluation each (two with CFG)

    eps : array of shape (n, dim)
        Prior draws

    cond : array of int, optional
        Class ids

    cfg_scale : float, optional
        Guidance scale; None evaluates the plain conditional velocity

    Returns
    -------
    numpy.ndarray
        Estimates of z_0
    """
    grid = make_grid(n_steps)
    z = np.atleast_2d(np.asarray(eps, dtype=np.float64)).copy()
    n = z.shape[0]
    for t_cur, t_next in zip(grid[:-1], grid[1:]):
        t = np.full(n, t_cur)
        if cfg_scale is None:
            v = field.velocity(z, t, cond)
        else:
            v = cfg_velocity(field, z, t, cond, cfg_scale)
        z = z - (t_cur - t_next) * v
        _check_state(z, "euler sampler at t={t:.4g}".format(t=t_next))
    return z


def few_step_sample(field, k, eps, cond=None, grid=None):
    """Sample with average velocities, ``z_{t_{i+1}} = z_{t_i} - h_i u(z_{t_i}, t_{i+1}, t_i)``.

    Parameters
    ----------
    field : VelocityNet or AnalyticField
        Anything with ``average_velocity(z, r, t, cond)``

    k : int
        Number of steps, exactly one forward pass each

    eps : array of shape (n, dim)
        Prior draws

    cond : array of int, optional
        Class ids; guidance is already folded into a distilled student

    grid : str or sequence of float, optional
        Time grid; uniform by default

    Returns
    -------
    numpy.ndarray
    """
    grid = parse_grid(grid, k)
    z = np.atleast_2d(np.asarray(eps, dtype=np.float64)).copy()
    n = z.shape[0]
    for t_cur, t_next in zip(grid[:-1], grid[1:]):
        u = field.average_velocity(z, np.full(n, t_next), np.full(n, t_cur), cond)
        z = z - (t_cur - t_next) * u
        _check_state(z, "few-step sampler at t={t:.4g}".format(t=t_next))
    return z
