"""Exact Cranston-Le Jan solution as a Wiener integral against a Volterra kernel.

The kernel is ``1 - beta s e^{beta s^2/2} int_s^t e^{-beta u^2/2} du``.  The
inner Gaussian integral is computed by composite Simpson quadrature with
``Q * max(1, |beta| T)`` subintervals per unit time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument

DEFAULT_Q = 256


def _simpson(f, a: float, b: float, n: int) -> float:
    """Composite Simpson rule with ``n`` (even) subintervals."""
    if b == a:
        return 0.0
    n += n % 2
    x = np.linspace(a, b, n + 1)
    y = f(x)
    h = (b - a) / n
    return h / 3.0 * (y[0] + y[-1] + 4.0 * y[1:-1:2].sum() + 2.0 * y[2:-1:2].sum())


def _subintervals(beta: float, length: float, Q: int, horizon: float | None = None) -> int:
    horizon = length if horizon is None else horizon
    per_unit = Q * max(1.0, abs(beta) * horizon)
    n = max(2, math.ceil(per_unit * length))
    return n + n % 2


@dataclass(frozen=True)
class VolterraKernel:
    beta: float
    Q: int = DEFAULT_Q

    def __call__(self, t: float, s: float) -> float:
        return kernel_eval(self, t, s)


def kernel_eval(k: VolterraKernel, t: float, s: float) -> float:
    if s > t:
        raise InvalidArgument("kernel needs s <= t")
    if s < 0:
        raise InvalidArgument("kernel needs s >= 0")
    b = k.beta
    if b == 0.0 or s == t:
        return 1.0
    n = _subintervals(b, t - s, k.Q, horizon=t)
    inner = _simpson(lambda u: np.exp(-0.5 * b * u * u), s, t, n)
    return 1.0 - b * s * math.exp(0.5 * b * s * s) * inner


def kernel_eval_direct(beta: float, t: float, s: float, Q: int = DEFAULT_Q) -> float:
    """Same kernel written with the combined exponent ``e^{beta (s^2 - u^2)/2}``."""
    if s > t:
        raise InvalidArgument("kernel needs s <= t")
    if s == t or beta == 0.0:
        return 1.0
    n = _subintervals(beta, t - s, Q, horizon=t)
    return 1.0 - beta * s * _simpson(lambda u: np.exp(0.5 * beta * (s * s - u * u)), s, t, n)


def _cumulative_gauss(beta: float, nodes: np.ndarray, Q: int) -> np.ndarray:
    """``F(t) = int_0^t e^{-beta u^2/2} du`` at increasing ``nodes`` starting at 0."""
    horizon = float(nodes[-1]) if len(nodes) else 0.0
    F = np.zeros(len(nodes))
    for i in range(1, len(nodes)):
        a, b = nodes[i - 1], nodes[i]
        n = _subintervals(beta, b - a, Q, horizon=horizon)
        F[i] = F[i - 1] + _simpson(lambda u: np.exp(-0.5 * beta * u * u), a, b, n)
    return F


def kernel_table(beta: float, grid, Q: int = DEFAULT_Q) -> np.ndarray:
    """Lower-triangular ``(N+1, N)`` table of ``kappa(t_n, t_i)`` for ``i < n``.

    Entries with ``i >= n`` are zero, so ``x0 + table @ dW`` is the left-point
    discretization of the Wiener integral at every node.
    """
    t = grid.nodes
    N = grid.N
    table = np.zeros((N + 1, N))
    if beta == 0.0:
        table[np.tril_indices(N + 1, -1, N)] = 1.0
        return table
    F = _cumulative_gauss(beta, t, Q)
    s = t[:N]
    pref = beta * s * np.exp(0.5 * beta * s * s)
    vals = 1.0 - pref[None, :] * (F[:, None] - F[None, :N])
    mask = np.arange(N)[None, :] < np.arange(N + 1)[:, None]
    table[mask] = vals[mask]
    table.setflags(write=False)
    return table


def exact_path(x0: float, beta: float, grid, increments, table: np.ndarray | None = None,
               Q: int = DEFAULT_Q) -> np.ndarray:
    """``X_{t_n} = x0 + sum_{i<n} kappa(t_n, t_i) dW_i`` for a batch of paths.

    ``increments`` may be ``(N,)``, ``(N, 1)`` or ``(B, N, 1)``; the result has
    shape ``(N+1,)`` for a single path and ``(B, N+1)`` for a batch.
    """
    if table is None:
        table = kernel_table(beta, grid, Q)
    dw = np.asarray(getattr(increments, "increments", increments), float)
    single = dw.ndim == 1 or (dw.ndim == 2 and dw.shape[1] == 1 and dw.shape[0] == grid.N)
    if dw.ndim == 3:
        if dw.shape[2] != 1:
            raise InvalidArgument("the exact solution is one-dimensional")
        dw = dw[:, :, 0]
    dw = dw.reshape(-1, grid.N)
    out = x0 + dw @ table.T
    return out[0] if single else out


def covariance_eval(beta: float, t: float, s: float, Q: int = DEFAULT_Q) -> float:
    """``int_0^{min(t,s)} kappa(t,u) kappa(s,u) du`` by composite Simpson."""
    if t < 0 or s < 0:
        raise InvalidArgument("times must be nonnegative")
    lo, hi = (t, s) if t <= s else (s, t)
    if lo == 0.0:
        return 0.0
    if beta == 0.0:
        return lo
    n = _subintervals(beta, lo, Q, horizon=hi)
    u = np.linspace(0.0, lo, n + 1)
    F = _cumulative_gauss(beta, np.concatenate([u, [hi]]), Q)
    Fu, Fhi = F[:-1], F[-1]
    pref = beta * u * np.exp(0.5 * beta * u * u)
    k_lo = 1.0 - pref * (Fu[-1] - Fu)
    k_hi = 1.0 - pref * (Fhi - Fu)
    y = k_lo * k_hi
    h = lo / n
    return float(h / 3.0 * (y[0] + y[-1] + 4.0 * y[1:-1:2].sum() + 2.0 * y[2:-1:2].sum()))


def linear_system_path(x0: float, beta: float, grid, increments) -> np.ndarray:
    """Euler-Maruyama for the unprojected system ``dX = -beta Y dt + dW, dY = t dX``.

    ``Y_t = int_0^t (X_t - X_u) du``; used to check that the scheme without
    projection approaches :func:`exact_path` as the step shrinks.
    """
    dw = np.asarray(increments, float)
    if dw.ndim == 3:
        dw = dw[:, :, 0]
    dw = dw.reshape(-1, grid.N)
    B = dw.shape[0]
    X = np.full(B, float(x0))
    Y = np.zeros(B)
    out = np.empty((B, grid.N + 1))
    out[:, 0] = X
    t = grid.nodes
    for n in range(grid.N):
        dx = -beta * Y * grid.dt + dw[:, n]
        Y = Y + t[n] * dx
        X = X + dx
        out[:, n + 1] = X
    return out
