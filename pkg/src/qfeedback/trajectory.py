"""Quantum-jump unravelling of static and filter-driven generators.

Jumps are timed by the waiting-time method: the unnormalized no-jump state
is integrated with fixed-step RK4 until its squared norm falls below a
uniform random threshold, and the crossing is located by bisection inside
the last step.

For the feedback model the Hamiltonian is H + f(t) F with a classical
filter f that jumps by one on system detections and decays exponentially
in between.  When F is diagonal the integration runs in the frame
rotating with exp(-i Phi(t) F), Phi = int f dt, which is known in closed
form; every matrix element of H then only carries the phase
exp(i Phi (F_j - F_k)).  A non-diagonal F is integrated directly.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numba
import numpy as np
import scipy.sparse as sp

from .errors import ContractViolation, TrajectoryError, TruncationError
from .fock import FOCK, Operator, SpaceSpec, partial_trace
from .models import GeneratorDescriptor

TOP_LEVEL_LIMIT = 1e-4
DISCARD_LIMIT = 0.01


# ---------------------------------------------------------------------------
# numba kernel


@numba.njit(cache=True)
def _phi_of(t, f0, t0, phi0, r):
    tau = t - t0
    if r > 0.0:
        return phi0 + f0 * (1.0 - math.exp(-r * tau)) / r
    return phi0 + f0 * tau


@numba.njit(cache=True)
def _f_of(t, f0, t0, r):
    return f0 * math.exp(-r * (t - t0))


@numba.njit(cache=True)
def _deriv(psi, out, ptr, cols, vals, grp, deltas, phase, fptr, fcols, fvals, fval, use_frame):
    n = psi.shape[0]
    for j in range(n):
        acc = 0j
        for k in range(ptr[j], ptr[j + 1]):
            acc += vals[k] * phase[grp[k]] * psi[cols[k]]
        if not use_frame:
            for k in range(fptr[j], fptr[j + 1]):
                acc += fval * fvals[k] * psi[fcols[k]]
        out[j] = -1j * acc


@numba.njit(cache=True)
def _stage(t, psi, out, ptr, cols, vals, grp, deltas, phase, fptr, fcols, fvals, use_frame, f0, t0, phi0, r):
    fval = 0.0
    if use_frame:
        ph = _phi_of(t, f0, t0, phi0, r)
        for g in range(deltas.shape[0]):
            phase[g] = complex(math.cos(ph * deltas[g]), math.sin(ph * deltas[g]))
    else:
        fval = _f_of(t, f0, t0, r)
    _deriv(psi, out, ptr, cols, vals, grp, deltas, phase, fptr, fcols, fvals, fval, use_frame)


@numba.njit(cache=True)
def _rk4(psi, out, work, phase, t, h, ptr, cols, vals, grp, deltas, fptr, fcols, fvals, use_frame,
         f0, t0, phi0, r):
    """One RK4 step from psi into out; ``work`` is a (5, n) scratch array."""
    n = psi.shape[0]
    k1 = work[0]
    k2 = work[1]
    k3 = work[2]
    k4 = work[3]
    tmp = work[4]
    _stage(t, psi, k1, ptr, cols, vals, grp, deltas, phase, fptr, fcols, fvals, use_frame, f0, t0, phi0, r)
    for i in range(n):
        tmp[i] = psi[i] + 0.5 * h * k1[i]
    _stage(t + 0.5 * h, tmp, k2, ptr, cols, vals, grp, deltas, phase, fptr, fcols, fvals, use_frame, f0, t0, phi0, r)
    for i in range(n):
        tmp[i] = psi[i] + 0.5 * h * k2[i]
    _stage(t + 0.5 * h, tmp, k3, ptr, cols, vals, grp, deltas, phase, fptr, fcols, fvals, use_frame, f0, t0, phi0, r)
    for i in range(n):
        tmp[i] = psi[i] + h * k3[i]
    _stage(t + h, tmp, k4, ptr, cols, vals, grp, deltas, phase, fptr, fcols, fvals, use_frame, f0, t0, phi0, r)
    for i in range(n):
        out[i] = psi[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


@numba.njit(cache=True)
def _norm2(psi):
    s = 0.0
    for i in range(psi.shape[0]):
        s += psi[i].real * psi[i].real + psi[i].imag * psi[i].imag
    return s


@numba.njit(cache=True)
def _evolve(psi, t, t_end, h, threshold, ptr, cols, vals, grp, deltas, fptr, fcols, fvals, use_frame,
            f0, t0, phi0, r):
    """No-jump evolution from t to t_end, stopping early when |psi|^2 <= threshold.

    Returns (psi, t, jumped).
    """
    n = psi.shape[0]
    work = np.empty((5, n), dtype=np.complex128)
    phase = np.ones(deltas.shape[0], dtype=np.complex128)
    cur = psi.copy()
    new = np.empty(n, dtype=np.complex128)
    eps_t = 1e-13 * max(1.0, abs(t_end))
    while t < t_end - eps_t:
        hh = min(h, t_end - t)
        _rk4(cur, new, work, phase, t, hh, ptr, cols, vals, grp, deltas, fptr, fcols, fvals, use_frame,
             f0, t0, phi0, r)
        if _norm2(new) <= threshold:
            lo = 0.0
            hi = hh
            best = new.copy()
            trial = np.empty(n, dtype=np.complex128)
            for _ in range(64):
                mid = 0.5 * (lo + hi)
                _rk4(cur, trial, work, phase, t, mid, ptr, cols, vals, grp, deltas, fptr, fcols, fvals,
                     use_frame, f0, t0, phi0, r)
                if _norm2(trial) <= threshold:
                    hi = mid
                    best[:] = trial
                else:
                    lo = mid
                if hi - lo <= 1e-14 * max(1.0, abs(t)):
                    break
            return best, t + hi, True
        cur, new = new, cur
        if hh < h:
            t = t_end
        else:
            t = t + hh
    return cur, t_end, False


# ---------------------------------------------------------------------------
# unravelling data


@dataclass(frozen=True, eq=False)
class UnravelSpec:
    """Arrays consumed by the integrator, derived from a :class:`GeneratorDescriptor`."""

    space: SpaceSpec
    ptr: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    grp: np.ndarray
    deltas: np.ndarray
    f_diag: np.ndarray | None
    f_csr: tuple
    use_frame: bool
    jump_ops: tuple
    rates: np.ndarray
    increments: np.ndarray
    f_decay: float
    step: float

    @property
    def dim(self) -> int:
        return self.space.total_dim

    @property
    def time_dependent(self) -> bool:
        return self.f_diag is not None or self.f_csr[0].size > 1


def _empty_csr(d):
    return (np.zeros(d + 1, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.complex128))


def _cluster(values: np.ndarray, tol: float):
    """Group nearly equal reals: returns (representatives, label per value)."""
    order = np.argsort(values, kind="stable")
    labels = np.empty(values.size, dtype=np.int64)
    reps = []
    for idx in order:
        v = values[idx]
        if not reps or v - reps[-1] > tol:
            reps.append(v)
        labels[idx] = len(reps) - 1
    return np.array(reps, dtype=float), labels


def unravel(desc: GeneratorDescriptor, step: float | None = None) -> UnravelSpec:
    """Build integrator arrays: H_eff = H - (i/2) sum rate c^dag c, grouped by frame phase."""
    d = desc.space.total_dim
    H = desc.hamiltonian.sparse().astype(complex)
    for ch in desc.channels:
        c = ch.op.sparse()
        H = H - 0.5j * ch.rate * (c.conj().T @ c)
    H = sp.csr_matrix(H)
    H.sum_duplicates()
    H.eliminate_zeros()
    use_frame = False
    f_diag = None
    f_csr = _empty_csr(d)
    if desc.f_operator is not None:
        F = desc.f_operator.dense()
        if np.count_nonzero(F - np.diag(np.diag(F))) == 0:
            use_frame = True
            f_diag = np.real(np.diag(F)).copy()
        else:
            Fs = sp.csr_matrix(F)
            f_csr = (Fs.indptr.astype(np.int64), Fs.indices.astype(np.int64), Fs.data.astype(np.complex128))
    coo = H.tocoo()
    if use_frame:
        raw = f_diag[coo.row] - f_diag[coo.col]
        deltas, grp = _cluster(raw, 1e-9 * max(1.0, float(np.max(np.abs(f_diag)))))
    else:
        deltas, grp = np.zeros(1), np.zeros(coo.nnz, dtype=np.int64)
    # csr order with group labels attached
    order = np.lexsort((coo.col, coo.row))
    rows, cols, vals, grp = coo.row[order], coo.col[order], coo.data[order], np.asarray(grp)[order]
    ptr = np.zeros(d + 1, dtype=np.int64)
    np.add.at(ptr, rows + 1, 1)
    ptr = np.cumsum(ptr)
    if step is None:
        hnorm = float(np.max(np.asarray(abs(H).sum(axis=1)))) if H.nnz else 0.0
        if not use_frame and desc.f_operator is not None:
            # assumes the filter stays below 2 (it jumps by 1 and decays)
            hnorm += 2.0 * float(np.max(np.abs(desc.f_operator.dense()).sum(axis=1)))
        fast = max([ch.rate for ch in desc.channels] + [2.0 * desc.f_decay])
        step = min(0.02, 0.05 / fast, 0.1 / max(hnorm, 1e-300))
    jump_ops = tuple(ch.op.sparse() for ch in desc.channels)
    return UnravelSpec(
        space=desc.space, ptr=ptr, cols=cols.astype(np.int64), vals=vals.astype(np.complex128),
        grp=grp.astype(np.int64), deltas=np.asarray(deltas, dtype=float), f_diag=f_diag, f_csr=f_csr,
        use_frame=use_frame, jump_ops=jump_ops,
        rates=np.array([ch.rate for ch in desc.channels], dtype=float),
        increments=np.array([ch.increments_f for ch in desc.channels], dtype=bool),
        f_decay=float(desc.f_decay), step=float(step))


@dataclass
class TrajectoryRecord:
    seed: tuple
    jump_times: np.ndarray
    jump_channels: np.ndarray
    sample_times: np.ndarray
    f_samples: np.ndarray
    states: np.ndarray
    final_state: np.ndarray
    discarded: bool = False
    reason: str = ""


def _seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if isinstance(seed, tuple):
        master, index = seed
        return np.random.SeedSequence(int(master), spawn_key=(int(index),))
    return np.random.SeedSequence(int(seed))


def _seed_label(ss: np.random.SeedSequence) -> tuple:
    return (ss.entropy, tuple(ss.spawn_key))


def _top_level_ok(space: SpaceSpec, psi: np.ndarray, limit: float) -> bool:
    probs = (np.abs(psi) ** 2).reshape(space.dims)
    for i, f in enumerate(space.factors):
        if f.kind != FOCK:
            continue
        top = np.take(probs, -1, axis=i).sum()
        if top > limit:
            return False
    return True


def simulate_trajectory(desc, psi0, T: float, seed, sample_times: Sequence[float] | None = None,
                        f_initial: float = 0.0, top_level_limit: float = TOP_LEVEL_LIMIT) -> TrajectoryRecord:
    """One jump trajectory on [0, T].

    Args:
        desc: :class:`GeneratorDescriptor` or a prepared :class:`UnravelSpec`.
        psi0: normalized initial state vector.
        seed: int, ``(master_seed, index)`` or a ``numpy.random.SeedSequence``.
        sample_times: output grid in [0, T]; T is always included.

    A trajectory whose top Fock level exceeds ``top_level_limit`` at any
    sample is returned with ``discarded=True``.
    """
    spec = desc if isinstance(desc, UnravelSpec) else unravel(desc)
    psi0 = np.asarray(psi0, dtype=np.complex128)
    if psi0.shape != (spec.dim,):
        raise ContractViolation("initial state has the wrong dimension")
    if abs(np.linalg.norm(psi0) - 1.0) > 1e-10:
        raise ContractViolation("initial state must be normalized")
    times = np.unique(np.append(np.asarray(sample_times if sample_times is not None else [], dtype=float), T))
    if times[0] < 0 or times[-1] > T:
        raise ValueError("sample times must lie in [0, T]")
    ss = _seed_sequence(seed)
    rng = np.random.default_rng(ss)
    r = spec.f_decay
    f0, t0, phi0 = float(f_initial), 0.0, 0.0
    fptr, fcols, fvals = spec.f_csr
    fd = spec.f_diag

    def to_lab(x, t):
        if not spec.use_frame:
            return x
        return np.exp(-1j * _phi_of(t, f0, t0, phi0, r) * fd) * x

    def to_frame(x, t):
        if not spec.use_frame:
            return x
        return np.exp(1j * _phi_of(t, f0, t0, phi0, r) * fd) * x

    psi = psi0.copy()
    t = 0.0
    threshold = rng.random()
    jt, jc = [], []
    states = np.empty((times.size, spec.dim), dtype=np.complex128)
    fs = np.empty(times.size)
    discarded, reason = False, ""
    for s_idx, target in enumerate(times):
        while True:
            psi, t_new, jumped = _evolve(psi, t, float(target), spec.step, threshold, spec.ptr, spec.cols,
                                         spec.vals, spec.grp, spec.deltas, fptr, fcols, fvals, spec.use_frame,
                                         f0, t0, phi0, r)
            if not np.all(np.isfinite(psi)):
                raise TrajectoryError(f"non-finite state at t={t_new:.6g}")
            t = t_new
            if not jumped:
                break
            lab = to_lab(psi, t)
            cands = [op @ lab for op in spec.jump_ops]
            weights = spec.rates * np.array([np.vdot(v, v).real for v in cands])
            total = weights.sum()
            if not total > 0 or not np.isfinite(total):
                raise TrajectoryError(f"jump with vanishing total rate at t={t:.6g}")
            k = int(np.searchsorted(np.cumsum(weights), rng.random() * total, side="right"))
            k = min(k, len(weights) - 1)
            new = cands[k] / math.sqrt(weights[k] / spec.rates[k])
            jt.append(t)
            jc.append(k)
            if spec.increments[k]:
                phi_now = _phi_of(t, f0, t0, phi0, r)
                f0, t0, phi0 = _f_of(t, f0, t0, r) + 1.0, t, phi_now
            psi = to_frame(new, t)
            threshold = rng.random()
        nrm = math.sqrt(_norm2(psi))
        if not nrm > 1e-300:
            raise TrajectoryError(f"norm underflow at t={t:.6g}")
        states[s_idx] = to_lab(psi, t) / nrm
        fs[s_idx] = _f_of(t, f0, t0, r)
        if not discarded and not _top_level_ok(spec.space, states[s_idx], top_level_limit):
            discarded, reason = True, f"top Fock level above {top_level_limit:g} at t={target:.6g}"
    return TrajectoryRecord(_seed_label(ss), np.array(jt), np.array(jc, dtype=int), times, fs, states,
                            states[-1].copy(), discarded, reason)


def f_from_jumps(record: TrajectoryRecord, decay: float, channel: int = 0, f_initial: float = 0.0) -> np.ndarray:
    """Reconstruct f at the sample times from the jump log on ``channel``."""
    out = []
    for t in record.sample_times:
        sel = (record.jump_channels == channel) & (record.jump_times <= t)
        val = f_initial * math.exp(-decay * t) + np.sum(np.exp(-decay * (t - record.jump_times[sel])))
        out.append(val)
    return np.array(out)


# ---------------------------------------------------------------------------
# ensembles

_WORKER_STATE: dict = {}


def _worker_init(spec, psi0, T, times, f_initial, limit):
    _WORKER_STATE.update(spec=spec, psi0=psi0, T=T, times=times, f_initial=f_initial, limit=limit)


def _worker_run(args):
    master, indices = args
    st = _WORKER_STATE
    return [simulate_trajectory(st["spec"], st["psi0"], st["T"], (master, i), st["times"], st["f_initial"],
                                st["limit"]) for i in indices]


@dataclass
class EnsembleEstimate:
    """Ensemble averages at the sample times (axis 0 of every array is time)."""

    times: np.ndarray
    n_traj: int
    n_discarded: int
    mean_rho: np.ndarray | None
    rho_se: np.ndarray | None
    reduced_rho: np.ndarray
    reduced_se: np.ndarray
    observables: dict = field(default_factory=dict)
    reduced_samples: np.ndarray | None = None
    records: list | None = None

    def observable(self, name: str):
        """(mean, standard error) arrays over the sample times."""
        return self.observables[name]


def _entry_se(samples: np.ndarray) -> np.ndarray:
    """Entrywise standard error with real and imaginary parts combined as re + i im."""
    n = samples.shape[0]
    if n < 2:
        return np.full(samples.shape[1:], np.nan) * (1 + 1j)
    re = samples.real.std(axis=0, ddof=1) / math.sqrt(n)
    im = samples.imag.std(axis=0, ddof=1) / math.sqrt(n)
    return re + 1j * im


def _chunks(n, k):
    bounds = np.linspace(0, n, k + 1).astype(int)
    return [list(range(bounds[i], bounds[i + 1])) for i in range(k) if bounds[i + 1] > bounds[i]]


def ensemble_average(desc, psi0, T: float, n_traj: int, master_seed: int, workers: int = 1,
                     sample_times: Sequence[float] | None = None,
                     observables: Mapping[str, Operator] | None = None, keep: int = 0,
                     f_initial: float = 0.0, keep_records: bool = False, keep_reduced: bool = False,
                     top_level_limit: float = TOP_LEVEL_LIMIT, discard_limit: float = DISCARD_LIMIT,
                     full_matrix_max: int = 64) -> EnsembleEstimate:
    """Average ``n_traj`` trajectories seeded by ``(master_seed, i)``.

    The reduction runs over trajectory index in a fixed order, so the result is
    bit-identical for any ``workers``.  Discarded trajectories are excluded and
    counted; more than ``discard_limit`` of them raises :class:`TruncationError`.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be at least 1")
    spec = desc if isinstance(desc, UnravelSpec) else unravel(desc)
    psi0 = np.asarray(psi0, dtype=np.complex128)
    times = np.unique(np.append(np.asarray(sample_times if sample_times is not None else [], dtype=float), T))
    workers = max(1, int(workers))
    if workers == 1:
        _worker_init(spec, psi0, T, times, f_initial, top_level_limit)
        records = _worker_run((master_seed, list(range(n_traj))))
    else:
        slots = [None] * n_traj
        jobs = _chunks(n_traj, min(n_traj, workers * 4))
        with ProcessPoolExecutor(max_workers=workers, initializer=_worker_init,
                                 initargs=(spec, psi0, T, times, f_initial, top_level_limit)) as ex:
            for chunk, recs in zip(jobs, ex.map(_worker_run, [(master_seed, c) for c in jobs])):
                for i, rec in zip(chunk, recs):
                    slots[i] = rec
        records = slots
    kept = [rec for rec in records if not rec.discarded]
    n_disc = n_traj - len(kept)
    if n_disc > discard_limit * n_traj:
        reasons = sorted({rec.reason for rec in records if rec.discarded})[:3]
        raise TruncationError(f"{n_disc}/{n_traj} trajectories discarded: {'; '.join(reasons)}")
    if not kept:
        raise TruncationError("every trajectory was discarded")
    states = np.stack([rec.states for rec in kept])  # (n, t, d)
    n = states.shape[0]
    space = spec.space
    d = spec.dim
    full = d <= full_matrix_max
    mean_rho = rho_se = None
    if full:
        outer = np.einsum("nti,ntj->ntij", states, states.conj())
        mean_rho = np.add.reduce(outer, axis=0) / n
        rho_se = _entry_se(outer)
        del outer
    if len(space.factors) > 1:
        red = np.empty((n, times.size) + (space.dims[keep],) * 2, dtype=np.complex128)
        for i in range(n):
            for j in range(times.size):
                red[i, j] = partial_trace(np.outer(states[i, j], states[i, j].conj()), keep, space)
    else:
        red = np.einsum("nti,ntj->ntij", states, states.conj())
    reduced = np.add.reduce(red, axis=0) / n
    reduced_se = _entry_se(red)
    obs = {}
    for name, op in (observables or {}).items():
        m = op.matrix
        vals = np.array([[np.vdot(states[i, j], m @ states[i, j]) for j in range(times.size)] for i in range(n)])
        vals = vals.real if op.is_hermitian() else vals
        mean = np.add.reduce(vals, axis=0) / n
        se = vals.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.full(times.size, np.nan)
        obs[name] = (mean, se)
    return EnsembleEstimate(times, n, n_disc, mean_rho, rho_se, reduced, reduced_se, obs,
                            red if keep_reduced else None, records if keep_records else None)


def bootstrap_bures(samples: np.ndarray, reference: np.ndarray, n_boot: int = 200, seed: int = 0,
                    convention: str = "printed") -> tuple[float, float]:
    """Bures distance of the sample mean to ``reference`` and its bootstrap standard error.

    ``samples`` holds one density matrix per trajectory (axis 0).
    """
    from .analysis import bures_distance

    samples = np.asarray(samples)
    n = samples.shape[0]
    mean = np.add.reduce(samples, axis=0) / n
    value = bures_distance(mean, reference, convention).bures
    rng = np.random.default_rng(seed)
    flat = samples.reshape(n, -1)
    boots = []
    for _ in range(n_boot):
        w = np.bincount(rng.integers(0, n, n), minlength=n) / n
        m = (w @ flat).reshape(samples.shape[1:])
        m = 0.5 * (m + m.conj().T)
        boots.append(bures_distance(m, reference, convention).bures)
    return value, float(np.std(boots, ddof=1))


def spectral_gap(L) -> float:
    """Smallest non-zero decay rate -Re(mu) of a generator (dense eigenvalues)."""
    m = L.matrix.toarray()
    mu = np.linalg.eigvals(m)
    rates = np.sort(-mu.real)
    nz = rates[rates > 1e-9 * max(1.0, np.abs(mu).max())]
    if nz.size == 0:
        raise ValueError("generator has no decaying modes")
    return float(nz[0])


@dataclass
class SteadyEstimate:
    ensemble: EnsembleEstimate
    T: float
    burn_in_z: dict
    burn_in_ok: bool


def steady_estimate(desc, psi0, n_traj: int, master_seed: int, gap: float, workers: int = 1,
                    observables: Mapping[str, Operator] | None = None, T: float | None = None,
                    z_limit: float = 3.0, **kw) -> SteadyEstimate:
    """Ensemble at T = max(10, 20/gap) with a burn-in comparison against T/2.

    Every observable must agree between T/2 and T within ``z_limit`` combined
    standard errors for ``burn_in_ok``.
    """
    if T is None:
        T = max(10.0, 20.0 / gap)
    ens = ensemble_average(desc, psi0, T, n_traj, master_seed, workers, sample_times=[0.5 * T],
                           observables=observables, **kw)
    z = {}
    for name, (mean, se) in ens.observables.items():
        denom = math.hypot(se[0], se[-1])
        z[name] = float(abs(mean[-1] - mean[0]) / denom) if denom > 0 else 0.0
    ok = all(v <= z_limit for v in z.values())
    return SteadyEstimate(ens, T, z, ok)
