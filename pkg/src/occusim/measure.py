"""Discrete occupation measures, box partitions of unity and the cylindrical norm.

A measure is stored as weighted atoms.  The partition is a regular grid of
half-open boxes covering ``[-R, R)^d`` (optionally shifted by ``origin``) plus
one exterior cell with index 0.  Projection maps a measure to the vector of
cell masses; the lift puts those masses back at the cell centers.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument

LIFT_CLAMP_TOL = 1e-12


@dataclass(frozen=True)
class DiscreteMeasure:
    """Finite measure ``sum_i weights[i] * delta_{locations[i]}`` on R^d."""

    locations: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if loc.ndim == 1:
            loc = loc.reshape(len(w), -1) if len(w) else loc.reshape(0, 1)
        if loc.ndim != 2 or loc.shape[0] != w.shape[0]:
            raise InvalidArgument("locations must be (n, d) with one weight per atom")
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise InvalidArgument("atom weights must be finite and nonnegative")
        loc.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "weights", w)

    @classmethod
    def empty(cls, d: int) -> "DiscreteMeasure":
        return cls(np.zeros((0, d)), np.zeros(0))

    @classmethod
    def dirac(cls, x, weight: float = 1.0) -> "DiscreteMeasure":
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return cls(x.reshape(1, -1), np.array([weight]))

    @property
    def dim(self) -> int:
        return self.locations.shape[1]

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    def __len__(self):
        return self.weights.shape[0]

    def __add__(self, other: "DiscreteMeasure") -> "DiscreteMeasure":
        if other.dim != self.dim:
            raise InvalidArgument("dimension mismatch")
        return DiscreteMeasure(
            np.vstack([self.locations, other.locations]),
            np.concatenate([self.weights, other.weights]),
        )

    def scaled(self, c: float) -> "DiscreteMeasure":
        return DiscreteMeasure(self.locations, c * self.weights)


def integrate(o: DiscreteMeasure, phi):
    """Pairing ``o(phi) = sum_i w_i phi(x_i)``.

    ``phi`` is called once on the ``(n, d)`` array of atom locations and must
    return shape ``(n,)`` or ``(n, m)``.
    """
    if len(o) == 0:
        probe = np.asarray(phi(np.zeros((1, o.dim))))
        return 0.0 if probe.ndim <= 1 else np.zeros(probe.shape[1:])
    vals = np.asarray(phi(o.locations), dtype=float)
    if vals.ndim == 1:
        return float(vals @ o.weights)
    return np.tensordot(o.weights, vals, axes=(0, 0))


def barycenter(o: DiscreteMeasure) -> np.ndarray:
    if o.mass <= 0:
        raise InvalidArgument("barycenter of a zero measure is undefined")
    return integrate(o, lambda y: y) / o.mass


@dataclass(frozen=True)
class PartitionOfUnity:
    """Indicator partition of ``origin + [-R, R)^d`` into ``M^d`` boxes.

    ``centers[0]`` is the designated exterior point ``origin + R e_1``;
    ``centers[1:]`` are the box midpoints in row-major order of the axis
    indices.
    """

    dim: int
    radius: float
    bins_per_axis: int
    origin: np.ndarray
    centers: np.ndarray = field(repr=False)

    @property
    def width(self) -> float:
        return 2.0 * self.radius / self.bins_per_axis

    @property
    def n_cells(self) -> int:
        """Number of coordinates ``N_K + 1`` of a projected vector."""
        return self.centers.shape[0]

    @property
    def lower(self) -> np.ndarray:
        return self.origin - self.radius

    def bin_bounds(self, k: int):
        """Lower and upper corners of interior box ``k``."""
        if not 1 <= k < self.n_cells:
            raise InvalidArgument("only interior boxes have bounds")
        idx = np.unravel_index(k - 1, (self.bins_per_axis,) * self.dim)
        lo = self.lower + self.width * np.asarray(idx, dtype=float)
        return lo, lo + self.width

    def locate(self, x) -> np.ndarray:
        """Vectorized :func:`locate_bin` over an ``(n, d)`` array."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise InvalidArgument(f"points must have dimension {self.dim}")
        m = self.bins_per_axis
        # membership is decided on the box edges; the division can round across them
        inside = np.all((x >= self.lower) & (x < self.origin + self.radius), axis=-1)
        idx = np.clip(np.floor((x - self.lower) / self.width), 0, m - 1)
        idx = np.where(inside[..., None], idx, 0).astype(np.int64)
        flat = np.zeros(idx.shape[:-1], dtype=np.int64)
        for a in range(self.dim):
            flat = flat * m + idx[..., a]
        return np.where(inside, flat + 1, 0)

    def one_hot(self, x) -> np.ndarray:
        """The vector ``f^K(x)``."""
        out = np.zeros(self.n_cells)
        out[locate_bin(self, x)] = 1.0
        return out


def build_uniform_partition(d: int, R: float, M: int, origin=None, anchor: str = "midpoint") -> PartitionOfUnity:
    """Regular box partition with ``M`` bins per axis on ``origin + [-R, R)^d``.

    ``anchor="corner"`` places each interior center at its box's lower corner
    instead of the midpoint.
    """
    if not R > 0:
        raise InvalidArgument("radius R must be positive")
    if int(M) != M or M < 1:
        raise InvalidArgument("bins per axis M must be a positive integer")
    if d < 1:
        raise InvalidArgument("dimension must be >= 1")
    if anchor not in ("midpoint", "corner"):
        raise InvalidArgument("anchor must be 'midpoint' or 'corner'")
    M = int(M)
    origin = np.zeros(d) if origin is None else np.broadcast_to(np.asarray(origin, float), (d,)).copy()
    h = 2.0 * R / M
    mids = -R + h * (np.arange(M) + (0.5 if anchor == "midpoint" else 0.0))
    grid = np.array(list(itertools.product(mids, repeat=d))).reshape(-1, d) + origin
    exterior = origin.copy()
    exterior[0] += R
    centers = np.vstack([exterior, grid])
    centers.setflags(write=False)
    origin.setflags(write=False)
    return PartitionOfUnity(d, float(R), M, origin, centers)


def locate_bin(p: PartitionOfUnity, x) -> int:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return int(p.locate(x.reshape(1, -1))[0])


def project(o: DiscreteMeasure, p: PartitionOfUnity) -> np.ndarray:
    """Cell masses ``z_k = o(f_k)``."""
    if o.dim != p.dim:
        raise InvalidArgument(f"measure has dimension {o.dim}, partition {p.dim}")
    z = np.zeros(p.n_cells)
    if len(o):
        np.add.at(z, p.locate(o.locations), o.weights)
    return z


def lift(z, p: PartitionOfUnity) -> DiscreteMeasure:
    """Measure with mass ``z_k`` at each center; zero entries are dropped."""
    z = np.asarray(z, dtype=float)
    if z.shape != (p.n_cells,):
        raise InvalidArgument(f"expected a vector of length {p.n_cells}")
    if np.any(z < -LIFT_CLAMP_TOL):
        raise InvalidArgument("occupation vector has negative entries")
    z = np.where(z < 0, 0.0, z)
    keep = z > 0
    return DiscreteMeasure(p.centers[keep], z[keep])


_CONST, _SIN, _COS = 0, 1, 2


@dataclass(frozen=True)
class SeparatingFamily:
    """Truncated family ``g_0..g_J`` of tensor-product sines and cosines.

    Each ``g_j`` is a product over axes of ``1``, ``sin(w x_a)`` or
    ``cos(w x_a)``.  ``weights`` rescale the family so that the weighted
    C^1 norms are square-summable to at most one.
    """

    dim: int
    origin: np.ndarray
    kinds: np.ndarray = field(repr=False)  # (J+1, d) factor type per axis
    freqs: np.ndarray = field(repr=False)  # (J+1, d)
    weights: np.ndarray = field(repr=False)  # (J+1,)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    def values(self, x) -> np.ndarray:
        """Unweighted ``g_j(x)`` for ``x`` of shape ``(..., d)`` -> ``(..., J+1)``."""
        x = (np.asarray(x, dtype=float) - self.origin)[..., None, :]
        arg = self.freqs * x
        fac = np.where(self.kinds == _SIN, np.sin(arg), np.where(self.kinds == _COS, np.cos(arg), 1.0))
        return np.prod(fac, axis=-1)

    def weighted_values(self, x) -> np.ndarray:
        return self.values(x) * self.weights

    def sup_norms(self) -> np.ndarray:
        return np.ones(self.size)

    def grad_sup_norms(self) -> np.ndarray:
        # exact for tensor products of sin/cos: the sup of |grad| is the largest factor frequency
        return np.max(np.where(self.kinds == _CONST, 0.0, self.freqs), axis=1)

    def c1_norms(self) -> np.ndarray:
        return self.sup_norms() + self.grad_sup_norms()

    def weighted_c1_norms(self) -> np.ndarray:
        return self.weights * self.c1_norms()

    def weighted_grad_norms(self) -> np.ndarray:
        return self.weights * self.grad_sup_norms()

    def pairings(self, o: DiscreteMeasure) -> np.ndarray:
        """Vector ``(o(w_j g_j))_j``."""
        if o.dim != self.dim:
            raise InvalidArgument("dimension mismatch")
        if len(o) == 0:
            return np.zeros(self.size)
        return o.weights @ self.weighted_values(o.locations)


def _basis_1d(j: int, base_freq: float):
    if j == 0:
        return _CONST, 0.0
    m = (j + 1) // 2
    return (_SIN if j % 2 else _COS), base_freq * 2.0 ** ((m - 1) / 2)


def build_separating_family(d: int, J: int = 64, base_freq: float = 1.0, origin=None,
                            theta: float = 0.7) -> SeparatingFamily:
    """Family ``g_0..g_J``; in ``d > 1`` tensor products ordered by total index.

    Axis factors are ``sin``/``cos`` of ``w_m (x - origin)`` with
    ``w_m = base_freq * 2^{(m-1)/2}``.  Weighted C^1 norms are
    ``theta * 2^{-j/2}``; any ``theta`` below ``2^{-1/2}`` keeps their square
    sum under one even after rounding.
    """
    if J < 1:
        raise InvalidArgument("truncation J must be >= 1")
    if d < 1:
        raise InvalidArgument("dimension must be >= 1")
    multi = []
    total = 0
    while len(multi) < J + 1:
        # all multi-indices with the given total, lexicographic
        level = [c for c in itertools.product(range(total + 1), repeat=d) if sum(c) == total]
        multi.extend(sorted(level, reverse=True))
        total += 1
    multi = multi[: J + 1]
    kinds = np.zeros((J + 1, d), dtype=np.int8)
    freqs = np.zeros((J + 1, d))
    for j, idx in enumerate(multi):
        for a, i in enumerate(idx):
            kinds[j, a], freqs[j, a] = _basis_1d(i, base_freq)
    grad = np.max(np.where(kinds == _CONST, 0.0, freqs), axis=1)
    c1 = 1.0 + grad
    weights = theta * 2.0 ** (-np.arange(J + 1) / 2) / np.maximum(1.0, c1)
    origin = np.zeros(d) if origin is None else np.broadcast_to(np.asarray(origin, float), (d,)).copy()
    for a in (origin, kinds, freqs, weights):
        a.setflags(write=False)
    return SeparatingFamily(d, origin, kinds, freqs, weights)


def family_for_partition(p: PartitionOfUnity, J: int = 64) -> SeparatingFamily:
    """Family centered on the partition box with lowest frequency ``2 / R``."""
    return build_separating_family(p.dim, J, base_freq=2.0 / p.radius, origin=p.origin)


def cyl_norm(o: DiscreteMeasure, fam: SeparatingFamily) -> float:
    """``(sum_j |o(g_j)|^2)^{1/2}`` over the weighted family."""
    return float(np.sqrt(np.sum(fam.pairings(o) ** 2)))


def signed_cyl_norm(pos: DiscreteMeasure, neg: DiscreteMeasure, fam: SeparatingFamily) -> float:
    """Cylindrical norm of the signed difference ``pos - neg``."""
    return float(np.sqrt(np.sum((fam.pairings(pos) - fam.pairings(neg)) ** 2)))
