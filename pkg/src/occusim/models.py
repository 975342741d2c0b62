"""Occupied SDE coefficient triples and their projections onto box partitions.

Measure-level coefficients take a :class:`DiscreteMeasure` and a point of
shape ``(d,)``.  Projected coefficients are batched: ``z`` has shape
``(B, N_K + 1)`` and ``x`` shape ``(B, d)``, one row per simulated path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .errors import InvalidArgument
from .measure import DiscreteMeasure, PartitionOfUnity, integrate, lift


class OsdeModel:
    """Coefficients ``(lambda, b, sigma)`` of an occupied SDE.

    Subclasses override :meth:`rate`, :meth:`drift` and :meth:`diffusion`, or
    callables can be passed directly.  ``lipschitz`` and ``growth`` are
    optional metadata; they are not used by the solver.
    """

    name = "custom"

    def __init__(self, dim, rate=None, drift=None, diffusion=None, *,
                 lipschitz=None, growth=None, x0=None):
        self.dim = int(dim)
        self._rate, self._drift, self._diffusion = rate, drift, diffusion
        self.lipschitz = lipschitz
        self.growth = growth
        self.x0 = np.zeros(self.dim) if x0 is None else np.atleast_1d(np.asarray(x0, float))

    def rate(self, o: DiscreteMeasure, x) -> float:
        return 1.0 if self._rate is None else float(self._rate(o, x))

    def drift(self, o: DiscreteMeasure, x) -> np.ndarray:
        if self._drift is None:
            return np.zeros(self.dim)
        return np.asarray(self._drift(o, x), float).reshape(self.dim)

    def diffusion(self, o: DiscreteMeasure, x) -> np.ndarray:
        if self._diffusion is None:
            return np.eye(self.dim)
        return np.asarray(self._diffusion(o, x), float).reshape(self.dim, self.dim)

    def params(self) -> dict:
        return {}

    def projected(self, p: PartitionOfUnity) -> "ProjectedModel":
        return GenericProjected(self, p)

    # only Cranston-Le Jan provides an exact solution
    exact_path = None


class ProjectedModel:
    """Batched coefficients ``phi^K(z, x) = phi(lift(z), x)``."""

    def __init__(self, model: OsdeModel, partition: PartitionOfUnity):
        if model.dim != partition.dim:
            raise InvalidArgument(f"model dimension {model.dim} != partition dimension {partition.dim}")
        self.model = model
        self.partition = partition
        self.dim = model.dim

    def rate(self, z, x):
        raise NotImplementedError

    def drift(self, z, x):
        raise NotImplementedError

    def diffusion(self, z, x):
        raise NotImplementedError

    def noise(self, z, x, dw):
        """``sigma^K(z, x) @ dw`` row by row."""
        return np.einsum("bij,bj->bi", self.diffusion(z, x), dw)


class GenericProjected(ProjectedModel):
    """Projection by explicit lift; slow, used for custom models and as an oracle."""

    def _rows(self, z, x, fn):
        p = self.partition
        return [fn(lift(zi, p), xi) for zi, xi in zip(np.asarray(z), np.asarray(x))]

    def rate(self, z, x):
        return np.array(self._rows(z, x, self.model.rate), dtype=float)

    def drift(self, z, x):
        return np.array(self._rows(z, x, self.model.drift), dtype=float).reshape(-1, self.dim)

    def diffusion(self, z, x):
        return np.array(self._rows(z, x, self.model.diffusion), dtype=float).reshape(-1, self.dim, self.dim)


def project_coefficients(model: OsdeModel, p: PartitionOfUnity, specialized: bool = True) -> ProjectedModel:
    """Projected coefficients; closed forms over ``z`` when the model has them."""
    if specialized:
        return model.projected(p)
    return GenericProjected(model, p)


# --- constant coefficients -------------------------------------------------

class ConstantModel(OsdeModel):
    """``dX = mu dt + vol dW`` with calendar clock; ignores the occupation."""

    name = "constant"

    def __init__(self, dim=1, mu=0.0, vol=1.0, x0=None):
        super().__init__(dim, x0=x0, lipschitz=0.0)
        self.mu = np.broadcast_to(np.asarray(mu, float), (self.dim,)).copy()
        self.vol = float(vol)

    def params(self):
        return {"mu": self.mu.tolist(), "vol": self.vol}

    def drift(self, o, x):
        return self.mu.copy()

    def diffusion(self, o, x):
        return self.vol * np.eye(self.dim)

    def projected(self, p):
        return _ConstantProjected(self, p)


class _ConstantProjected(ProjectedModel):
    def rate(self, z, x):
        return np.ones(len(x))

    def drift(self, z, x):
        return np.broadcast_to(self.model.mu, x.shape).copy()

    def diffusion(self, z, x):
        return np.broadcast_to(self.model.vol * np.eye(self.dim), (len(x), self.dim, self.dim)).copy()

    def noise(self, z, x, dw):
        return self.model.vol * dw


# --- Cranston-Le Jan -------------------------------------------------------

class CranstonLeJan(OsdeModel):
    """Self-attracting diffusion ``b(o, x) = beta * int (y - x) o(dy)``, ``sigma = 1``."""

    name = "cranston"

    def __init__(self, beta: float, x0=0.0):
        # Lipschitz in x per unit occupation mass
        super().__init__(1, x0=x0, lipschitz=abs(beta))
        self.beta = float(beta)

    def params(self):
        return {"beta": self.beta, "x0": float(self.x0[0])}

    def drift(self, o, x):
        x = np.atleast_1d(np.asarray(x, float))
        first = integrate(o, lambda y: y[:, 0])
        return np.array([self.beta * (first - o.mass * x[0])])

    def diffusion(self, o, x):
        return np.eye(1)

    def projected(self, p):
        return _CranstonProjected(self, p)

    def exact_path(self, grid, increments, x0=None, table=None):
        from .oracle import exact_path
        x0 = self.x0[0] if x0 is None else x0
        return exact_path(x0, self.beta, grid, increments, table=table)


class _CranstonProjected(ProjectedModel):
    def __init__(self, model, p):
        super().__init__(model, p)
        self._c = np.ascontiguousarray(p.centers[:, 0])

    def rate(self, z, x):
        return np.ones(len(x))

    def drift(self, z, x):
        mass = z.sum(axis=1)
        first = (z * self._c).sum(axis=1)
        return (self.model.beta * (first - mass * x[:, 0]))[:, None]

    def diffusion(self, z, x):
        return np.ones((len(x), 1, 1))

    def noise(self, z, x, dw):
        return dw.copy()


def cranston_le_jan(beta: float, x0=0.0) -> CranstonLeJan:
    return CranstonLeJan(beta, x0)


# --- Raimond ---------------------------------------------------------------

def regularized_direction(v, eps):
    """``v / sqrt(eps + |v|^2)`` along the last axis."""
    v = np.asarray(v, float)
    return v / np.sqrt(eps + np.sum(v * v, axis=-1, keepdims=True))


class Raimond(OsdeModel):
    """Multi-dimensional self-interacting diffusion with regularized unit drift."""

    name = "raimond"

    def __init__(self, beta: float, eps: float = 1e-2, dim: int = 2, x0=None):
        if not eps > 0:
            raise InvalidArgument("regularization eps must be positive")
        super().__init__(dim, x0=x0, lipschitz=abs(beta) / math.sqrt(eps), growth=abs(beta))
        self.beta = float(beta)
        self.eps = float(eps)

    def params(self):
        return {"beta": self.beta, "eps": self.eps, "dim": self.dim, "x0": self.x0.tolist()}

    def drift(self, o, x):
        x = np.asarray(x, float).reshape(self.dim)
        if len(o) == 0:
            return np.zeros(self.dim)
        return self.beta * (o.weights @ regularized_direction(o.locations - x, self.eps))

    def diffusion(self, o, x):
        return np.eye(self.dim)

    def projected(self, p):
        return _RaimondProjected(self, p)


@numba.njit(cache=True)
def _raimond_sum(z, c, x, eps):
    # sequential sum over occupied cells in index order: each row's result is
    # independent of the batch it is computed in
    B, n = z.shape
    d = c.shape[1]
    out = np.zeros((B, d))
    v = np.empty(d)
    for b in range(B):
        for k in range(n):
            w = z[b, k]
            if w == 0.0:
                continue
            r2 = eps
            for a in range(d):
                v[a] = c[k, a] - x[b, a]
                r2 += v[a] * v[a]
            s = w / np.sqrt(r2)
            for a in range(d):
                out[b, a] += s * v[a]
    return out


class _RaimondProjected(ProjectedModel):
    def __init__(self, model, p):
        super().__init__(model, p)
        self._c = np.ascontiguousarray(p.centers)

    def rate(self, z, x):
        return np.ones(len(x))

    def drift(self, z, x):
        out = _raimond_sum(np.ascontiguousarray(z), self._c, np.ascontiguousarray(x), self.model.eps)
        return self.model.beta * out

    def diffusion(self, z, x):
        return np.broadcast_to(np.eye(self.dim), (len(x), self.dim, self.dim)).copy()

    def noise(self, z, x, dw):
        return dw.copy()


def raimond(beta: float, eps: float = 1e-2, d: int = 2, x0=None) -> Raimond:
    return Raimond(beta, eps, d, x0)


# --- local occupied volatility ---------------------------------------------

@dataclass(frozen=True)
class LovParams:
    alpha: float = 1.0
    beta: float = -0.1
    gamma: float = 0.01
    delta: float | None = None  # None -> v_min / 2
    eps: float = 0.1
    kappa: float = 0.0
    x0: float = 100.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise InvalidArgument("alpha must be positive")
        if not self.eps > 0:
            raise InvalidArgument("eps must be positive")
        if not self.x0 > 0:
            raise InvalidArgument("x0 must be positive")
        vmin = self.v_min
        if not vmin > 0:
            raise InvalidArgument(f"local variance minimum {vmin} must be positive")
        if self.delta is None:
            object.__setattr__(self, "delta", vmin / 2)
        if not abs(self.delta) < vmin:
            raise InvalidArgument(f"|delta| must be below v_min = {vmin}")

    @property
    def v_min(self) -> float:
        return self.gamma - self.beta ** 2 / (4 * self.alpha)

    def v_loc(self, x):
        r = np.asarray(x, float) / self.x0 - 1.0
        return self.alpha * r * r + self.beta * r + self.gamma

    def sensitivity(self, y):
        return self.delta * np.tanh((np.asarray(y, float) - 1.0) / self.eps)


class LocalOccupiedVol(OsdeModel):
    """``dX/X = sigma dW`` with ``sigma^2 = v_loc(X) + mean of l(y/X)`` under the occupation.

    The clock rate ``1 + kappa * mass`` reproduces ``e^{kappa t}`` for a flow
    started from the zero measure.
    """

    name = "lov"

    def __init__(self, params: LovParams):
        super().__init__(1, x0=params.x0)
        self.p = params

    def params(self):
        from dataclasses import asdict
        return asdict(self.p)

    def rate(self, o, x):
        return 1.0 + self.p.kappa * o.mass

    def drift(self, o, x):
        return np.zeros(1)

    def variance(self, o, x) -> float:
        """``sigma^2 / x^2``; the occupation average is taken as 0 at zero mass."""
        x = float(np.atleast_1d(x)[0])
        v = float(self.p.v_loc(x))
        m = o.mass
        if m > 0:
            v += integrate(o, lambda y: self.p.sensitivity(y[:, 0] / x)) / m
        return v

    def diffusion(self, o, x):
        x = float(np.atleast_1d(x)[0])
        return np.array([[x * math.sqrt(self.variance(o, x))]])

    def projected(self, p):
        return _LovProjected(self, p)


class _LovProjected(ProjectedModel):
    def __init__(self, model, p):
        super().__init__(model, p)
        self._c = np.ascontiguousarray(p.centers[:, 0])

    def rate(self, z, x):
        return 1.0 + self.model.p.kappa * z.sum(axis=1)

    def drift(self, z, x):
        return np.zeros_like(x)

    def vol(self, z, x):
        prm = self.model.p
        s = x[:, 0]
        mass = z.sum(axis=1)
        occ = (z * prm.sensitivity(self._c[None, :] / s[:, None])).sum(axis=1)
        avg = np.divide(occ, mass, out=np.zeros_like(occ), where=mass > 0)
        return s * np.sqrt(prm.v_loc(s) + avg)

    def diffusion(self, z, x):
        return self.vol(z, x)[:, None, None]

    def noise(self, z, x, dw):
        return self.vol(z, x)[:, None] * dw


def lov(params: LovParams) -> LocalOccupiedVol:
    return LocalOccupiedVol(params)
