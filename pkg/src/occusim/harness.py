"""Strong and weak error experiments over truncation levels.

Every truncation level and the reference solution are driven by the same
Brownian increments (common random numbers), so pathwise differences are
measured directly.  Errors are root-mean-square over paths of per-path
sup-over-nodes distances.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InsufficientData, InvalidArgument, SimulationDiverged
from .measure import PartitionOfUnity, SeparatingFamily, build_uniform_partition, family_for_partition
from .models import CranstonLeJan, OsdeModel
from .oracle import exact_path, kernel_table
from .scheme import PathBatch, SimulatedPath, TimeGrid, brownian_increments, map_chunks, simulate

log = logging.getLogger(__name__)

MAX_EXCLUDED_FRACTION = 0.01
N_BOOT = 1000
HARNESS_CHUNK = 256


@dataclass
class ErrorRow:
    K: int
    state_error: float
    occ_error: float
    state_err_stderr: float
    occ_err_stderr: float
    state_error_T: float
    occ_error_T: float
    exterior_mass: float
    truncated_fraction: float
    n_paths: int
    excluded: int


@dataclass
class ErrorTable:
    rows: list[ErrorRow]
    N: int
    seed: int
    reference: str
    # bootstrap standard errors of e(K_i) - e(K_{i+1}); paired resampling
    state_diff_stderr: list[float] = field(default_factory=list)
    occ_diff_stderr: list[float] = field(default_factory=list)

    COLUMNS = ("K", "state_error", "occ_error", "state_err_stderr", "occ_err_stderr",
               "state_error_T", "occ_error_T", "exterior_mass", "truncated_fraction",
               "n_paths", "excluded")

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    @property
    def Ks(self) -> np.ndarray:
        return self.column("K")


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r2: float
    k_min: float
    k_max: float
    n_points: int


@dataclass
class PriceRow:
    K: int
    price: float
    stderr: float
    ci_low: float
    ci_high: float
    weak_error: float
    weak_err_stderr: float
    strong_error: float


@dataclass
class PriceTable:
    rows: list[PriceRow]
    reference_K: int
    reference_price: float
    reference_stderr: float
    payoff: str
    n_paths: int
    excluded: int

    COLUMNS = ("K", "price", "stderr", "ci_low", "ci_high", "weak_error",
               "weak_err_stderr", "strong_error")

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)


@dataclass(frozen=True)
class PriceEstimate:
    p_hat: float
    std_error: float
    n_paths: int
    K: int
    payoff: str

    @property
    def half_width(self) -> float:
        return 1.96 * self.std_error


# --- payoffs ---------------------------------------------------------------

def lifted_barycenter(z: np.ndarray, p: PartitionOfUnity) -> np.ndarray:
    """Barycenter ``sum z_k x_k / sum z_k`` of the lifted occupation, row-wise."""
    z = np.atleast_2d(z)
    mass = z.sum(axis=1)
    if np.any(mass <= 0):
        raise InvalidArgument("barycenter of a zero occupation is undefined")
    return (z @ p.centers) / mass[:, None]


class AsianFloatingCall:
    """``(X_T - barycenter(O_T))^+``, 1-Lipschitz in ``|dX_T| + |d barycenter|``."""

    name = "asian-floating-call"
    lipschitz = 1.0

    def __call__(self, x_T, z_T, p: PartitionOfUnity) -> np.ndarray:
        x_T = np.atleast_2d(x_T)
        return np.maximum(x_T[:, 0] - lifted_barycenter(z_T, p)[:, 0], 0.0)

    def distance(self, xa, za, pa, xb, zb, pb) -> np.ndarray:
        xa, xb = np.atleast_2d(xa), np.atleast_2d(xb)
        dx = np.abs(xa[:, 0] - xb[:, 0])
        db = np.abs(lifted_barycenter(za, pa)[:, 0] - lifted_barycenter(zb, pb)[:, 0])
        return dx + db


PAYOFFS = {AsianFloatingCall.name: AsianFloatingCall}


def asian_floating_payoff(path: SimulatedPath, p: PartitionOfUnity) -> float:
    if path.states.shape[1] != 1:
        raise InvalidArgument("the floating-strike Asian payoff is one-dimensional")
    if path.z_final.sum() <= 0:
        raise InvalidArgument("zero occupation mass")
    return float(AsianFloatingCall()(path.states[-1][None], path.z_final[None], p)[0])


# --- rate fit --------------------------------------------------------------

def fit_rate(table_or_K, column=None) -> RateFit:
    """Least squares of ``log(error)`` on ``log(K)``; non-positive errors are dropped."""
    if isinstance(table_or_K, ErrorTable):
        K = table_or_K.Ks
        err = table_or_K.column(column or "state_error")
    elif isinstance(table_or_K, PriceTable):
        K = table_or_K.column("K")
        err = table_or_K.column(column or "weak_error")
    else:
        K = np.asarray(table_or_K, float)
        err = np.asarray(column, float)
    ok = (err > 0) & np.isfinite(err) & (K > 0)
    K, err = K[ok], err[ok]
    if len(K) < 3:
        raise InsufficientData(f"rate fit needs >= 3 positive errors, got {len(K)}")
    lx, ly = np.log(K), np.log(err)
    A = np.vstack([lx, np.ones_like(lx)]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - (slope * lx + intercept)
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(float(slope), float(intercept), float(r2), float(K.min()), float(K.max()), len(K))


# --- statistics ------------------------------------------------------------

def _boot_rng(seed):
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(2 ** 32 - 1,)))


def bootstrap_rms(samples: np.ndarray, seed: int, n_boot: int = N_BOOT, block: int = 100) -> np.ndarray:
    """Bootstrap replicates of ``sqrt(mean(s^2))`` for each column of ``samples`` ``(n, m)``.

    One resampling of path indices is shared by all columns, so replicate
    differences between columns reflect the coupling.
    """
    sq = np.asarray(samples, float) ** 2
    n = sq.shape[0]
    rng = _boot_rng(seed)
    out = np.empty((n_boot, sq.shape[1]))
    for a in range(0, n_boot, block):
        b = min(a + block, n_boot)
        counts = rng.multinomial(n, np.full(n, 1.0 / n), size=b - a).astype(float)
        out[a:b] = np.sqrt(counts @ sq / n)
    return out


def _rms(x):
    return float(np.sqrt(np.mean(np.square(x)))) if len(x) else float("nan")


# --- reference solutions ---------------------------------------------------

def _lifted_increments(batch: PathBatch, gc: np.ndarray) -> np.ndarray:
    return batch.dz[:, :, None] * gc[batch.bins]


def _occ_sup(ref_inc, ref_p0, inc, p0):
    """Per-path sup and terminal cylindrical distance between two occupation flows."""
    diff = ref_inc - inc
    np.cumsum(diff, axis=1, out=diff)
    diff += (ref_p0 - p0)[:, None, :]
    norms = np.sqrt(np.sum(diff * diff, axis=2))
    d0 = np.sqrt(np.sum((ref_p0 - p0) ** 2, axis=1))
    return np.maximum(norms.max(axis=1), d0), norms[:, -1]


def _state_sup(ref_states, states):
    dist = np.sqrt(np.sum((ref_states - states) ** 2, axis=2))
    return dist.max(axis=1), dist[:, -1]


def _oracle_reference(model: CranstonLeJan, grid, dw, table, fam, r_stop):
    X = exact_path(model.x0[0], model.beta, grid, dw, table=table)  # (B, N+1)
    states = X[:, :, None]
    inc = grid.dt * fam.weighted_values(states[:, :-1])
    if r_stop is not None:
        P = np.concatenate([np.zeros((len(X), 1, fam.size)), np.cumsum(inc, axis=1)], axis=1)
        norm2 = np.sum(P * P, axis=2) + X * X
        hit = norm2 >= r_stop * r_stop
        first = np.where(hit.any(axis=1), hit.argmax(axis=1), grid.N + 1)
        nodes = np.arange(grid.N + 1)
        frozen = nodes[None, :] > first[:, None]
        X = np.where(frozen, X[np.arange(len(X)), np.minimum(first, grid.N)][:, None], X)
        states = X[:, :, None]
        inc = np.where(frozen[:, 1:, None], 0.0, inc)
    return states, inc, np.zeros((len(X), fam.size))


def strong_error_experiment(model: OsdeModel, K_list, grid: TimeGrid, n_paths: int, seed: int,
                            reference="oracle", R: float = 2.0, origin=None, anchor: str = "midpoint",
                            fam: SeparatingFamily | None = None, J_fam: int = 64, r_stop=None,
                            workers: int | None = None, chunk: int = HARNESS_CHUNK,
                            n_boot: int = N_BOOT, return_samples: bool = False):
    """Error table of projected solutions against a coupled reference.

    ``reference`` is ``"oracle"`` (exact Cranston-Le Jan solution) or an
    integer ``K_bar`` for a high-resolution projected run.
    """
    K_list = [int(k) for k in K_list]
    if sorted(K_list) != K_list or len(set(K_list)) != len(K_list):
        raise InvalidArgument("K_list must be strictly ascending")
    if n_paths < 1:
        raise InvalidArgument("need at least one path")
    d = model.dim
    parts = {K: build_uniform_partition(d, R, K, origin, anchor) for K in K_list}
    if fam is None:
        fam = family_for_partition(parts[K_list[0]], J_fam)
    projs = {K: model.projected(parts[K]) for K in K_list}
    gcs = {K: fam.weighted_values(parts[K].centers) for K in K_list}

    if reference == "oracle":
        if not isinstance(model, CranstonLeJan):
            raise InvalidArgument("the exact oracle exists only for the Cranston-Le Jan model")
        table = kernel_table(model.beta, grid)
        ref_label = "oracle"
    else:
        K_bar = int(reference)
        if K_bar <= max(K_list):
            raise InvalidArgument("reference K_bar must exceed every K in K_list")
        ref_part = build_uniform_partition(d, R, K_bar, origin, anchor)
        ref_proj = model.projected(ref_part)
        ref_gc = fam.weighted_values(ref_part.centers)
        ref_label = f"K={K_bar}"

    def run_chunk(lo, hi):
        idx = np.arange(lo, hi)
        dw = brownian_increments(seed, idx, grid, d)
        if reference == "oracle":
            ref_states, ref_inc, ref_p0 = _oracle_reference(model, grid, dw, table, fam, r_stop)
            ref_bad = ~np.all(np.isfinite(ref_states), axis=(1, 2))
        else:
            rb = simulate(ref_proj, grid, dw, r_stop=r_stop, fam=fam, on_diverge="mark", path_indices=idx)
            ref_states, ref_inc, ref_p0 = rb.states, _lifted_increments(rb, ref_gc), rb.z0 @ ref_gc
            ref_bad = rb.diverged
        res = {"bad": ref_bad.copy(), "K": {}}
        for K in K_list:
            b = simulate(projs[K], grid, dw, r_stop=r_stop, fam=fam, on_diverge="mark", path_indices=idx)
            res["bad"] |= b.diverged
            s_sup, s_T = _state_sup(ref_states, b.states)
            o_sup, o_T = _occ_sup(ref_inc, ref_p0, _lifted_increments(b, gcs[K]), b.z0 @ gcs[K])
            mass = b.z_final.sum(axis=1)
            ext = np.divide(b.z_final[:, 0], mass, out=np.zeros_like(mass), where=mass > 0)
            res["K"][K] = np.stack([s_sup, o_sup, s_T, o_T, ext, (b.exit_step >= 0).astype(float)], axis=1)
        return res

    chunks = map_chunks(run_chunk, n_paths, workers, chunk)
    bad = np.concatenate([c["bad"] for c in chunks])
    per_K = {K: np.concatenate([c["K"][K] for c in chunks]) for K in K_list}
    excluded = int(bad.sum())
    if excluded:
        warnings.warn(f"{excluded} of {n_paths} paths diverged and were excluded", RuntimeWarning)
    if excluded > MAX_EXCLUDED_FRACTION * n_paths:
        raise SimulationDiverged(-1, None, f"{excluded} of {n_paths} paths diverged (> 1%)")
    keep = ~bad

    state_s = np.stack([per_K[K][keep, 0] for K in K_list], axis=1)
    occ_s = np.stack([per_K[K][keep, 1] for K in K_list], axis=1)
    boot_state = bootstrap_rms(state_s, seed, n_boot)
    boot_occ = bootstrap_rms(occ_s, seed + 1, n_boot)
    rows = []
    for i, K in enumerate(K_list):
        a = per_K[K][keep]
        rows.append(ErrorRow(
            K=K, state_error=_rms(a[:, 0]), occ_error=_rms(a[:, 1]),
            state_err_stderr=float(boot_state[:, i].std(ddof=1)),
            occ_err_stderr=float(boot_occ[:, i].std(ddof=1)),
            state_error_T=_rms(a[:, 2]), occ_error_T=_rms(a[:, 3]),
            exterior_mass=float(a[:, 4].mean()), truncated_fraction=float(a[:, 5].mean()),
            n_paths=int(keep.sum()), excluded=excluded,
        ))
    tab = ErrorTable(rows, grid.N, int(seed), ref_label,
                     state_diff_stderr=[float(x) for x in np.diff(boot_state, axis=1).std(axis=0, ddof=1)],
                     occ_diff_stderr=[float(x) for x in np.diff(boot_occ, axis=1).std(axis=0, ddof=1)])
    if return_samples:
        return tab, {"state": state_s, "occ": occ_s}
    return tab


def monotonicity_violations(table: ErrorTable, column: str = "state_error", n_se: float = 3.0):
    """Consecutive K pairs where the error grows by more than ``n_se`` paired standard errors."""
    e = table.column(column)
    se = table.state_diff_stderr if column == "state_error" else table.occ_diff_stderr
    return [(table.rows[i].K, table.rows[i + 1].K) for i in range(len(e) - 1)
            if e[i + 1] - e[i] > n_se * se[i]]


def strictly_decreasing(table: ErrorTable, column: str = "state_error", n_se: float = 3.0) -> bool:
    """Every consecutive drop exceeds ``n_se`` paired bootstrap standard errors."""
    e = table.column(column)
    se = table.state_diff_stderr if column == "state_error" else table.occ_diff_stderr
    return all(e[i] - e[i + 1] > n_se * se[i] for i in range(len(e) - 1))


# --- weak error ------------------------------------------------------------

def weak_error_experiment(model: OsdeModel, payoff, K_list, K_bar: int, grid: TimeGrid,
                          n_paths: int, seed: int, R: float = 2.0, origin=None, anchor: str = "midpoint",
                          workers: int | None = None, chunk: int = HARNESS_CHUNK) -> PriceTable:
    """Monte Carlo prices ``p^{K,J}`` and weak errors against ``p^{K_bar,J}``.

    ``strong_error`` is the root-mean-square over paths of the payoff's own
    Lipschitz metric between the coupled level-K and reference terminal
    states; the weak error can never exceed ``lipschitz * strong_error``.
    """
    K_list = [int(k) for k in K_list]
    if K_bar <= max(K_list):
        raise InvalidArgument("reference K_bar must exceed every K in K_list")
    if isinstance(payoff, str):
        payoff = PAYOFFS[payoff]()
    d = model.dim
    levels = K_list + [int(K_bar)]
    parts = {K: build_uniform_partition(d, R, K, origin, anchor) for K in levels}
    projs = {K: model.projected(parts[K]) for K in levels}

    def run_chunk(lo, hi):
        idx = np.arange(lo, hi)
        dw = brownian_increments(seed, idx, grid, d)
        out = {}
        bad = np.zeros(hi - lo, dtype=bool)
        for K in levels:
            b = simulate(projs[K], grid, dw, on_diverge="mark", path_indices=idx)
            bad |= b.diverged
            out[K] = (b.states[:, -1].copy(), b.z_final)
        ref_x, ref_z = out[K_bar]
        res = {"bad": bad}
        safe = lambda z: np.where(bad[:, None], 1.0, z)  # noqa: E731 placeholder mass for excluded rows
        for K in levels:
            x, z = out[K]
            pay = payoff(x, safe(z), parts[K])
            dist = payoff.distance(x, safe(z), parts[K], ref_x, safe(ref_z), parts[K_bar])
            res[K] = np.stack([pay, dist], axis=1)
        return res

    chunks = map_chunks(run_chunk, n_paths, workers, chunk)
    bad = np.concatenate([c["bad"] for c in chunks])
    excluded = int(bad.sum())
    if excluded:
        warnings.warn(f"{excluded} of {n_paths} paths diverged and were excluded", RuntimeWarning)
    if excluded > MAX_EXCLUDED_FRACTION * n_paths:
        raise SimulationDiverged(-1, None, f"{excluded} of {n_paths} paths diverged (> 1%)")
    keep = ~bad
    data = {K: np.concatenate([c[K] for c in chunks])[keep] for K in levels}
    n = int(keep.sum())
    ref_pay = data[K_bar][:, 0]
    p_ref = float(np.mean(ref_pay))
    se_ref = float(np.std(ref_pay, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    rows = []
    for K in levels:
        pay, dist = data[K][:, 0], data[K][:, 1]
        p = float(np.mean(pay))
        se = float(np.std(pay, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        diff = pay - ref_pay
        wse = float(np.std(diff, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        rows.append(PriceRow(K, p, se, p - 1.96 * se, p + 1.96 * se, abs(p - p_ref), wse, _rms(dist)))
    return PriceTable(rows, int(K_bar), p_ref, se_ref, payoff.name, n_paths, excluded)


def price(model: OsdeModel, payoff, K: int, grid: TimeGrid, n_paths: int, seed: int,
          R: float = 2.0, origin=None, workers=None) -> PriceEstimate:
    """Plain Monte Carlo estimate ``p^{K,J}`` at a single truncation level."""
    if isinstance(payoff, str):
        payoff = PAYOFFS[payoff]()
    part = build_uniform_partition(model.dim, R, K, origin)
    proj = model.projected(part)

    def run_chunk(lo, hi):
        idx = np.arange(lo, hi)
        b = simulate(proj, grid, brownian_increments(seed, idx, grid, model.dim), path_indices=idx)
        return payoff(b.states[:, -1], b.z_final, part)

    pay = np.concatenate(map_chunks(run_chunk, n_paths, workers, HARNESS_CHUNK))
    se = float(np.std(pay, ddof=1) / np.sqrt(len(pay))) if len(pay) > 1 else 0.0
    return PriceEstimate(float(pay.mean()), se, len(pay), int(K), payoff.name)


# --- exit times ------------------------------------------------------------

def joint_norm_sup(batch: PathBatch, p: PartitionOfUnity, fam: SeparatingFamily) -> np.ndarray:
    """Per-path ``sup_n (|lift(Z_n)|^2 + |X_n|^2)^{1/2}`` over the grid nodes."""
    P = batch.pairing_paths(fam.weighted_values(p.centers))
    norm2 = np.sum(P * P, axis=2) + np.sum(batch.states ** 2, axis=2)
    return np.sqrt(norm2.max(axis=1))


def exit_time_diagnostics(paths, p: PartitionOfUnity, fam: SeparatingFamily, radii) -> dict:
    """Fraction of paths whose joint norm reaches ``R`` before the horizon, per ``R``.

    ``paths`` is a :class:`PathBatch` or an iterable of :class:`SimulatedPath`.
    """
    gc = fam.weighted_values(p.centers)
    if isinstance(paths, PathBatch):
        sups = joint_norm_sup(paths, p, fam)
    else:
        sups = []
        for path in paths:
            P = np.concatenate([[path.z0 @ gc], path.z0 @ gc + np.cumsum(path.dz[:, None] * gc[path.bins], axis=0)])
            sups.append(np.sqrt(np.max(np.sum(P * P, axis=1) + np.sum(path.states ** 2, axis=1))))
        sups = np.asarray(sups)
    radii = sorted(float(r) for r in radii)
    return {r: float(np.mean(sups >= r)) for r in radii}


def table_records(table) -> list[dict]:
    return [asdict(r) for r in table.rows]
