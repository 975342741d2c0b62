"""Brownian increments and the Euler-Maruyama scheme for projected OSDEs.

Increments are drawn from a counter-based Philox stream keyed by
``(seed, path_index)``, so a path's noise never depends on which batch or
worker produced it, and every truncation level reuses the same noise.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, SimulationDiverged
from .measure import PartitionOfUnity, SeparatingFamily
from .models import OsdeModel, ProjectedModel

RNG_ID = "numpy.random.Philox(SeedSequence(seed, spawn_key=(path_index,))).standard_normal"
DEFAULT_CHUNK = 512
THREADS_ENV = "OCCUSIM_THREADS"


@dataclass(frozen=True)
class TimeGrid:
    T: float
    N: int

    def __post_init__(self):
        if not self.T > 0:
            raise InvalidArgument("horizon T must be positive")
        if int(self.N) != self.N or self.N < 1:
            raise InvalidArgument("number of steps N must be a positive integer")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "T", float(self.T))

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def nodes(self) -> np.ndarray:
        return self.T * np.arange(self.N + 1) / self.N


@dataclass(frozen=True)
class BrownianPath:
    increments: np.ndarray  # (N, d)
    seed: int
    path_index: int


def _stream(seed: int, path_index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(path_index),))
    return np.random.Generator(np.random.Philox(ss))


def generate_brownian(seed: int, path_index: int, grid: TimeGrid, d: int = 1) -> BrownianPath:
    dw = _stream(seed, path_index).standard_normal((grid.N, d)) * np.sqrt(grid.dt)
    dw.setflags(write=False)
    return BrownianPath(dw, int(seed), int(path_index))


def brownian_increments(seed: int, path_indices, grid: TimeGrid, d: int = 1) -> np.ndarray:
    """Stacked increments ``(B, N, d)`` for the given path indices."""
    idx = list(path_indices)
    out = np.empty((len(idx), grid.N, d))
    sq = np.sqrt(grid.dt)
    for row, j in enumerate(idx):
        out[row] = _stream(seed, j).standard_normal((grid.N, d)) * sq
    return out


@dataclass
class SimulatedPath:
    """One path of the scheme.

    ``bins[i]`` and ``dz[i]`` record the cell and mass added by step
    ``start + i``, so the occupation vector at any node can be replayed.
    """

    states: np.ndarray  # (N - start + 1, d), nodes start..N
    z0: np.ndarray
    z_final: np.ndarray
    bins: np.ndarray
    dz: np.ndarray
    start: int = 0
    exit_step: int | None = None
    path_index: int | None = None

    @property
    def truncated(self) -> bool:
        return self.exit_step is not None

    @property
    def exterior_fraction(self) -> float:
        m = self.z_final.sum()
        return float(self.z_final[0] / m) if m > 0 else 0.0

    def occupation_at(self, n: int) -> np.ndarray:
        """Occupation vector after the update of step ``n - 1`` (node ``n``)."""
        if not self.start <= n <= self.start + len(self.bins):
            raise InvalidArgument("step outside the simulated range")
        z = self.z0.copy()
        for k, inc in zip(self.bins[: n - self.start], self.dz[: n - self.start]):
            z[k] += inc
        return z

    def snapshot(self, n: int):
        """Markov state ``(X_{t_n}, Z_{t_n})``."""
        return self.states[n - self.start].copy(), self.occupation_at(n)


@dataclass
class PathBatch:
    states: np.ndarray  # (B, steps + 1, d)
    z0: np.ndarray  # (B, n_cells)
    z_final: np.ndarray
    bins: np.ndarray  # (B, steps)
    dz: np.ndarray
    exit_step: np.ndarray  # (B,), -1 when never stopped
    diverged_step: np.ndarray  # (B,), -1 when finite throughout
    start: int
    path_indices: np.ndarray

    def __len__(self):
        return self.states.shape[0]

    @property
    def diverged(self) -> np.ndarray:
        return self.diverged_step >= 0

    def path(self, i: int) -> SimulatedPath:
        e = int(self.exit_step[i])
        return SimulatedPath(
            self.states[i], self.z0[i], self.z_final[i], self.bins[i], self.dz[i],
            self.start, None if e < 0 else e, int(self.path_indices[i]),
        )

    def pairing_paths(self, centers_values: np.ndarray) -> np.ndarray:
        """``(B, steps + 1, J + 1)`` pairings of the lifted occupation with a family.

        ``centers_values`` holds the weighted family evaluated at the cell
        centers, shape ``(n_cells, J + 1)``.
        """
        inc = self.dz[:, :, None] * centers_values[self.bins]
        out = np.empty((len(self), inc.shape[1] + 1, centers_values.shape[1]))
        out[:, 0] = self.z0 @ centers_values
        np.cumsum(inc, axis=1, out=out[:, 1:])
        out[:, 1:] += out[:, :1]
        return out


def simulate(proj: ProjectedModel, grid: TimeGrid, increments, x0=None, z0=None, *,
             r_stop=None, fam: SeparatingFamily | None = None, start: int = 0,
             on_diverge: str = "raise", path_indices=None) -> PathBatch:
    """Euler-Maruyama over a batch of paths driven by ``increments`` ``(B, N, d)``.

    Each step first adds ``rate * dt`` to the cell holding the current state,
    then moves the state with coefficients read from the updated occupation.
    With ``r_stop`` set, a path is frozen from the first node where the joint
    norm ``(|lift(Z)|^2 + |X|^2)^{1/2}`` reaches ``r_stop``.
    """
    p: PartitionOfUnity = proj.partition
    d = proj.dim
    dw = np.asarray(increments, float)
    if dw.ndim == 2:
        dw = dw[None]
    B = dw.shape[0]
    if dw.shape[1:] != (grid.N, d):
        raise InvalidArgument(f"increments must have shape (B, {grid.N}, {d})")
    if not 0 <= start <= grid.N:
        raise InvalidArgument("start step outside the grid")
    if x0 is None:
        x0 = proj.model.x0
    X = np.array(np.broadcast_to(np.asarray(x0, float), (B, d)))
    Z = np.zeros((B, p.n_cells)) if z0 is None else np.array(np.broadcast_to(np.asarray(z0, float), (B, p.n_cells)))
    if np.any(Z < 0):
        raise InvalidArgument("initial occupation must be nonnegative")
    if path_indices is None:
        path_indices = np.arange(B)
    path_indices = np.asarray(path_indices)
    if r_stop is not None and fam is None:
        raise InvalidArgument("exit-time truncation needs a separating family")

    steps = grid.N - start
    dt = grid.dt
    rows = np.arange(B)
    states = np.empty((B, steps + 1, d))
    states[:, 0] = X
    bins = np.zeros((B, steps), dtype=np.int64)
    dzs = np.zeros((B, steps))
    z_init = Z.copy()
    exit_step = np.full(B, -1, dtype=np.int64)
    div_step = np.full(B, -1, dtype=np.int64)
    active = np.ones(B, dtype=bool)

    if r_stop is not None:
        gc = fam.weighted_values(p.centers)
        P = Z @ gc

    def check_exit(n):
        nonlocal active
        hit = active & (np.sum(P * P, axis=1) + np.sum(X * X, axis=1) >= r_stop * r_stop)
        exit_step[hit] = n
        active = active & ~hit

    for i in range(steps):
        n = start + i
        if r_stop is not None:
            check_exit(n)
        k = p.locate(X)
        lam = proj.rate(Z, X)
        if np.any(lam < 0):
            raise InvalidArgument("clock rate must be nonnegative")
        inc = np.where(active, lam * dt, 0.0)
        Z[rows, k] += inc
        bins[:, i] = k
        dzs[:, i] = inc
        if r_stop is not None:
            P += inc[:, None] * gc[k]
        Xn = X + proj.drift(Z, X) * dt + proj.noise(Z, X, dw[:, n])
        bad = active & ~np.all(np.isfinite(Xn), axis=1)
        if bad.any():
            if on_diverge == "raise":
                r = int(np.flatnonzero(bad)[0])
                raise SimulationDiverged(n, int(path_indices[r]))
            div_step[bad] = n
            active = active & ~bad
        X = np.where(active[:, None], Xn, X)
        states[:, i + 1] = X
    if r_stop is not None:
        check_exit(grid.N)
    return PathBatch(states, z_init, Z, bins, dzs, exit_step, div_step, start, path_indices)


def euler_maruyama(proj: ProjectedModel, grid: TimeGrid, w: BrownianPath, x0=None, z0=None,
                   r_stop=None, fam: SeparatingFamily | None = None, start: int = 0) -> SimulatedPath:
    """Single-path scheme; raises :class:`SimulationDiverged` on a non-finite state."""
    batch = simulate(proj, grid, w.increments[None], x0, z0, r_stop=r_stop, fam=fam,
                     start=start, path_indices=[w.path_index])
    return batch.path(0)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def chunk_ranges(n_paths: int, chunk: int = DEFAULT_CHUNK):
    return [(a, min(a + chunk, n_paths)) for a in range(0, n_paths, chunk)]


def map_chunks(fn, n_paths: int, workers: int | None = None, chunk: int = DEFAULT_CHUNK):
    """Apply ``fn(lo, hi)`` to fixed path chunks, returning results in chunk order.

    Chunk boundaries never depend on ``workers``, which keeps every per-path
    result identical for any degree of parallelism.
    """
    ranges = chunk_ranges(n_paths, chunk)
    workers = default_workers() if workers is None else workers
    if workers <= 1 or len(ranges) == 1:
        return [fn(a, b) for a, b in ranges]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(lambda r: fn(*r), ranges))


def run_batch(model: OsdeModel | ProjectedModel, grid: TimeGrid, seed: int, n_paths: int,
              partition: PartitionOfUnity | None = None, x0=None, *, r_stop=None,
              fam: SeparatingFamily | None = None, workers: int | None = None,
              chunk: int = DEFAULT_CHUNK):
    """Yield :class:`SimulatedPath` for path indices ``0..n_paths-1`` in order."""
    if n_paths < 1:
        raise InvalidArgument("need at least one path")
    proj = model if isinstance(model, ProjectedModel) else model.projected(partition)

    def one(lo, hi):
        idx = np.arange(lo, hi)
        dw = brownian_increments(seed, idx, grid, proj.dim)
        return simulate(proj, grid, dw, x0, r_stop=r_stop, fam=fam, path_indices=idx)

    workers = default_workers() if workers is None else workers
    # single-threaded runs stream one chunk at a time instead of holding all paths
    batches = (one(a, b) for a, b in chunk_ranges(n_paths, chunk)) if workers <= 1 \
        else map_chunks(one, n_paths, workers, chunk)
    for batch in batches:
        for i in range(len(batch)):
            yield batch.path(i)
