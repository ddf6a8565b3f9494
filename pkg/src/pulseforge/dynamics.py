"""Piecewise-constant Schrödinger propagation of bound pulse schedules.

Two models are available:

``effective``
    Qubits only, each in its own rotating frame with the rotating-wave
    approximation. Drive channels give ``(Ω/2)(Re(w) X - Im(w) Y)`` on their
    qubit; control channels give the reduced cross-resonance Hamiltonian whose
    rates scale with the complex drive ``w``. Idle qubits do not evolve, so the
    schedule is cut into intervals with a fixed set of active pulses and each
    interval is propagated separately on every group of qubits the active
    pulses connect.

``full``
    Qubits plus the shared bus mode (drift Hamiltonian of
    :func:`~pulseforge.device_model.static_hamiltonian`), propagated either in
    the lab frame or in the frame rotating at each qubit's dressed frequency
    (optionally dropping counter-rotating terms). Each sample is split into
    substeps and each substep is propagated with the fourth-order Magnus
    expansion sampled at the two Gauss-Legendre nodes, then exponentiated
    exactly so the propagator stays unitary.

Envelope samples are held constant over ``[k dt, (k+1) dt)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import device_model as dm
from .device_model import CRCoefficients, DeviceConfig
from .errors import BindingError, CapacityError, ValidationError
from .pulse_ir import (
    Channel,
    Play,
    PulseSchedule,
    frame_timeline,
    validate_bound,
    virtual_z_phases,
)
from .qcore import PAULI, expm_hermitian_batch, matexp_hermitian, project_bus_vacuum

MODELS = ("effective", "full")
FRAMES = ("rotating", "lab")
MAX_FULL_UNITARY_QUBITS = 3
_CHUNK = 4096
DEFAULT_SUBSTEPS = 16
_MAX_PHASE_PER_STEP = 0.25


@dataclass
class PropagationResult:
    """Outcome of :func:`propagate`.

    ``final_state`` lives on the qubit register for the effective model and on
    qubits⊗bus for the full model (use :func:`qubit_state` to project).
    ``leakage`` is the bus non-vacuum weight; ``wall_samples`` the schedule
    length in samples.
    """

    final_state: np.ndarray
    leakage: float
    wall_samples: int
    model: str = "effective"
    bus_cutoff: int = 1
    n_qubits: int = 1

    def qubit_state(self) -> np.ndarray:
        psi, _ = project_bus_vacuum(self.final_state, self.n_qubits, self.bus_cutoff)
        return psi


# ----------------------------------------------------------------------------- utils


def chain_product(us: np.ndarray) -> np.ndarray:
    """Time-ordered product ``U[K-1] ... U[1] U[0]`` by pairwise reduction."""
    us = np.asarray(us)
    if us.shape[0] == 0:
        raise ValidationError("empty unitary chain")
    while us.shape[0] > 1:
        odd = us.shape[0] % 2
        paired = us[1 : us.shape[0] - odd : 2] @ us[0 : us.shape[0] - odd : 2]
        us = np.concatenate([paired, us[-1:]]) if odd else paired
    return us[0]


def _sinc(x: np.ndarray) -> np.ndarray:
    return np.sinc(np.asarray(x) / np.pi)


def _frame_phase(segs, times: np.ndarray, dt: float) -> np.ndarray:
    """Frame phase at (fractional) sample ``times`` from a frame timeline."""
    starts = np.array([s.t0 for s in segs], dtype=float)
    idx = np.searchsorted(starts, times, side="right") - 1
    idx = np.clip(idx, 0, len(segs) - 1)
    phase = np.array([s.phase for s in segs])[idx]
    det = np.array([s.detuning for s in segs])[idx]
    return phase + 2 * np.pi * det * (times - starts[idx]) * dt, det


@dataclass
class _PlayData:
    channel: Channel
    t0: int
    n: int
    w: np.ndarray  # complex drive envelope times frame phase, per sample
    detuning: np.ndarray  # Hz, per sample


def _compile_plays(s: PulseSchedule, dt: float) -> list[_PlayData]:
    timelines = {ch: frame_timeline(s, ch, dt) for ch in s.channels}
    out = []
    for p in s.plays:
        n = p.duration
        mids = p.t0 + np.arange(n) + 0.5
        theta, det = _frame_phase(timelines[p.channel], mids, dt)
        # average of exp(iθ) over each sample (θ is linear inside it)
        w = p.envelope.samples() * np.exp(1j * theta) * _sinc(np.pi * det * dt)
        out.append(_PlayData(p.channel, p.t0, n, w, det))
    return out


def _embed_batch(op: np.ndarray, op_qubits: Sequence[int], group: Sequence[int]) -> np.ndarray:
    """Embed a batch of operators on ``op_qubits`` into the ordered ``group``."""
    k, g = len(op_qubits), len(group)
    kb = op.shape[0]
    rest = [q for q in group if q not in op_qubits]
    full = np.einsum("kab,cd->kacbd", op, np.eye(2 ** (g - k))).reshape(kb, 2**g, 2**g)
    cur = list(op_qubits) + rest
    if cur == list(group):
        return full
    perm = [cur.index(q) for q in group]
    t = full.reshape((kb,) + (2,) * (2 * g))
    axes = [0] + [1 + p for p in perm] + [1 + g + p for p in perm]
    return t.transpose(axes).reshape(kb, 2**g, 2**g)


def _apply_local(state: np.ndarray, u: np.ndarray, qubits: Sequence[int], n: int) -> np.ndarray:
    """Apply ``u`` on ``qubits`` of an ``n``-qubit register (state or column stack)."""
    extra = state.shape[1:]
    g = len(qubits)
    t = state.reshape((2,) * n + extra)
    ut = u.reshape((2,) * (2 * g))
    t = np.tensordot(ut, t, axes=(list(range(g, 2 * g)), list(qubits)))
    t = np.moveaxis(t, list(range(g)), list(qubits))
    return t.reshape(state.shape)


def _rz(phi: float) -> np.ndarray:
    return np.diag([np.exp(-0.5j * phi), np.exp(0.5j * phi)])


# ------------------------------------------------------------------ effective model


def _kappa_op(kappa: np.ndarray) -> np.ndarray:
    """Batch of ``[[0, κ], [κ*, 0]] = Re(κ) X - Im(κ) Y``."""
    out = np.zeros(kappa.shape + (2, 2), dtype=complex)
    out[..., 0, 1] = kappa
    out[..., 1, 0] = np.conj(kappa)
    return out


def _effective_local(pd: _PlayData, sl: slice, device: DeviceConfig):
    """Local Hamiltonian batch (rad/s) and its qubits for part of one play."""
    w = pd.w[sl]
    if pd.channel.kind == "drive":
        return 0.5 * device.drive_scale * _kappa_op(w), (pd.channel.qubits[0],)
    r = device.rates
    rho_z = complex(r["zx"], -r["zy"])
    rho_i = complex(r["ix"], -r["iy"])
    Z, I = PAULI["Z"], PAULI["I"]
    mag = np.abs(w)[:, None, None]
    h = (
        np.einsum("ab,kcd->kacbd", Z, _kappa_op(w * rho_z)).reshape(-1, 4, 4)
        + np.einsum("ab,kcd->kacbd", I, _kappa_op(w * rho_i)).reshape(-1, 4, 4)
        + mag * (r["zz"] * np.kron(Z, Z) + r["iz"] * np.kron(I, Z))
    )
    return h, pd.channel.qubits


def _groups(plays: Iterable[_PlayData]) -> list[tuple[tuple[int, ...], list[_PlayData]]]:
    parent: dict[int, int] = {}

    def find(q):
        while parent.setdefault(q, q) != q:
            q = parent[q]
        return q

    plays = list(plays)
    for p in plays:
        qs = p.channel.qubits
        for q in qs[1:]:
            parent[find(q)] = find(qs[0])
        find(qs[0])
    out: dict[int, list[_PlayData]] = {}
    for p in plays:
        out.setdefault(find(p.channel.qubits[0]), []).append(p)
    result = []
    for members in out.values():
        qubits = tuple(sorted({q for p in members for q in p.channel.qubits}))
        result.append((qubits, members))
    return sorted(result)


def _propagate_effective(
    s: PulseSchedule, device: DeviceConfig, state: np.ndarray
) -> np.ndarray:
    n = device.n_qubits
    plays = [p for p in _compile_plays(s, device.dt) if np.any(p.w != 0)]
    cuts = sorted({p.t0 for p in plays} | {p.t0 + p.n for p in plays})
    for a, b in zip(cuts[:-1], cuts[1:]):
        active = [p for p in plays if p.t0 < b and p.t0 + p.n > a]
        for qubits, members in _groups(active):
            h = np.zeros((b - a, 2 ** len(qubits), 2 ** len(qubits)), dtype=complex)
            for p in members:
                local, qs = _effective_local(p, slice(a - p.t0, b - p.t0), device)
                h += _embed_batch(local, qs, qubits)
            u = chain_product(expm_hermitian_batch(h, device.dt))
            state = _apply_local(state, u, qubits, n)
    return state


# ------------------------------------------------------------------------ full model


@dataclass
class _Term:
    """``c(t) e^{iνt} M + h.c.``; ``play`` gives ``c`` (None means ``c = 1``)."""

    matrix: np.ndarray
    freq: float
    play: Play | None = None
    frame: list | None = None


def _coefficient(term: _Term, tau: np.ndarray, device: DeviceConfig) -> np.ndarray:
    """``c`` at fractional sample times ``tau`` (envelope held over each sample)."""
    p = term.play
    k = np.floor(tau).astype(int) - p.t0
    inside = (k >= 0) & (k < p.duration)
    out = np.zeros(tau.shape, dtype=complex)
    if np.any(inside):
        theta, _ = _frame_phase(term.frame, tau[inside], device.dt)
        out[inside] = 0.5 * device.drive_scale * p.envelope.samples()[k[inside]] * np.exp(1j * theta)
    return out


def _propagate_full(
    s: PulseSchedule,
    device: DeviceConfig,
    state: np.ndarray,
    frame: str,
    rwa: bool,
    substeps: int | None,
) -> np.ndarray:
    if s.duration == 0:
        return state
    dt = device.dt
    h_static = dm.static_hamiltonian(device)
    if frame == "lab":
        fdiag = np.zeros(h_static.shape[0])
        const = h_static
        terms: list[_Term] = []
    else:
        fdiag = dm.rotating_frame(device).omega
        const = np.diag(np.diag(h_static).real - fdiag).astype(complex)
        off = np.triu(h_static, 1)
        terms = [_Term(off, 0.0)] if np.any(off) else []
    timelines = {ch: frame_timeline(s, ch, dt) for ch in s.channels}
    for p in s.plays:
        omega = 2 * np.pi * dm.channel_frequency(device, p.channel)
        m = dm._embed(PAULI["X"], p.channel.driven_qubit, device)
        terms.append(_Term(m, omega, p, timelines[p.channel]))

    # element (m, n) of a term oscillates at ν + f_m - f_n in the chosen frame
    fdiff = fdiag[:, None] - fdiag[None, :]
    cut = 0.5 * 2 * np.pi * min(dm.dressed_frequencies(device))
    prepared = []
    fastest = 0.0
    for t in terms:
        freq = t.freq + fdiff
        keep = t.matrix != 0
        if frame == "rotating" and rwa:
            keep &= np.abs(freq) <= cut
        if not np.any(keep):
            continue
        fastest = max(fastest, float(np.max(np.abs(freq[keep]))))
        prepared.append((np.where(keep, t.matrix, 0), np.where(keep, freq, 0.0), t))
    if substeps is None:
        if frame == "rotating" and rwa:
            substeps = max(1, int(math.ceil(fastest * dt / _MAX_PHASE_PER_STEP)))
        else:
            substeps = DEFAULT_SUBSTEPS
    if substeps < 1:
        raise ValidationError("substeps must be positive")
    h = dt / substeps
    nsub = s.duration * substeps
    offset = h / (2 * math.sqrt(3))

    def hamiltonian(times):
        out = np.broadcast_to(const, (times.shape[0],) + const.shape).copy()
        for m, freq, term in prepared:
            osc = np.exp(1j * times[:, None, None] * freq[None]) * m[None]
            if term.play is not None:
                osc = osc * _coefficient(term, times / dt, device)[:, None, None]
            out += osc + np.conj(np.swapaxes(osc, -1, -2))
        return out

    # fourth-order Magnus step from the two Gauss-Legendre nodes of each substep
    for start in range(0, nsub, _CHUNK):
        stop = min(nsub, start + _CHUNK)
        mid = (np.arange(start, stop) + 0.5) * h
        h1 = hamiltonian(mid - offset)
        h2 = hamiltonian(mid + offset)
        k = 0.5 * h * (h1 + h2) - 1j * (math.sqrt(3) / 12) * h**2 * (h2 @ h1 - h1 @ h2)
        state = chain_product(expm_hermitian_batch(k, 1.0)) @ state
    return state


# ------------------------------------------------------------------------ interface


def _initial(device: DeviceConfig, model: str, initial: np.ndarray | None, unitary: bool) -> np.ndarray:
    nq = 2**device.n_qubits
    full = dm.full_dim(device) if model == "full" else nq
    if unitary:
        return np.eye(full, dtype=complex)
    if initial is None:
        psi = np.zeros(full, dtype=complex)
        psi[0] = 1.0
        return psi
    psi = np.asarray(initial, dtype=complex).ravel()
    if model == "full" and psi.shape[0] == nq and full != nq:
        vac = np.zeros(device.bus_cutoff)
        vac[0] = 1.0
        psi = np.kron(psi, vac)
    if psi.shape[0] != full:
        raise ValidationError(f"initial state has dimension {psi.shape[0]}, expected {full}")
    return psi


def _check(s: PulseSchedule, device: DeviceConfig, model: str, frame: str) -> None:
    if model not in MODELS:
        raise ValidationError(f"unknown model {model!r}")
    if frame not in FRAMES:
        raise ValidationError(f"unknown frame {frame!r}")
    if model == "effective" and frame != "rotating":
        raise ValidationError("the effective model is defined in the rotating frame only")
    if not s.is_bound:
        raise BindingError(f"unbound parameters {sorted(s.unbound_names())}")
    if s.n_qubits != device.n_qubits:
        raise ValidationError(
            f"schedule has {s.n_qubits} qubits but the device has {device.n_qubits}"
        )
    validate_bound(s, device)
    if model == "full":
        dim = dm.full_dim(device)
        if dim > (2**10) * device.bus_cutoff:
            raise CapacityError(f"dimension {dim} exceeds capacity")


def _evolve(
    s: PulseSchedule,
    device: DeviceConfig,
    model: str,
    frame: str,
    state: np.ndarray,
    rwa: bool,
    substeps: int | None,
    virtual_z: bool | None,
) -> np.ndarray:
    if model == "effective":
        state = _propagate_effective(s, device, state)
    else:
        state = _propagate_full(s, device, state, frame, rwa, substeps)
    if virtual_z is None:
        virtual_z = bool(s.meta.get("virtual_z", False))
    if virtual_z:
        for q, phi in sorted(virtual_z_phases(s).items()):
            if model == "effective":
                state = _apply_local(state, _rz(phi), (q,), device.n_qubits)
            else:
                state = dm._embed(_rz(phi), q, device) @ state
    return state


def propagate(
    schedule: PulseSchedule,
    device: DeviceConfig,
    model: str = "effective",
    frame: str = "rotating",
    initial: np.ndarray | None = None,
    rwa: bool = True,
    substeps: int | None = None,
    virtual_z: bool | None = None,
) -> PropagationResult:
    """Propagate ``initial`` (default ``|0...0>``) through a bound schedule.

    Parameters
    ----------
    model : {"effective", "full"}
    frame : {"rotating", "lab"}
        ``lab`` is only meaningful for the full model.
    rwa : bool
        Drop counter-rotating terms in the rotating frame (full model).
    substeps : int, optional
        Substeps per sample for the full model. Defaults to 16 without the RWA
        and to an automatic count resolving the fastest kept oscillation
        otherwise.
    virtual_z : bool, optional
        Apply the Z rotations still owed by frame shifts at the end. Defaults
        to the schedule's ``virtual_z`` metadata (set by gate lowering).
    """
    _check(schedule, device, model, frame)
    psi = _initial(device, model, initial, unitary=False)
    psi = _evolve(schedule, device, model, frame, psi, rwa, substeps, virtual_z)
    bus = device.bus_cutoff if model == "full" else 1
    leakage = 0.0
    if bus > 1:
        _, leakage = project_bus_vacuum(psi, device.n_qubits, bus)
    return PropagationResult(psi, leakage, schedule.duration, model, bus, device.n_qubits)


def propagate_unitary(
    schedule: PulseSchedule,
    device: DeviceConfig,
    model: str = "effective",
    frame: str = "rotating",
    rwa: bool = True,
    substeps: int | None = None,
    virtual_z: bool | None = None,
) -> np.ndarray:
    """Full propagator (columns are propagated basis states).

    For the full model the result acts on qubits⊗bus; see :func:`qubit_block`.
    """
    if model == "full" and device.n_qubits > MAX_FULL_UNITARY_QUBITS:
        raise CapacityError(
            f"full-model unitaries are limited to {MAX_FULL_UNITARY_QUBITS} qubits"
        )
    _check(schedule, device, model, frame)
    u = _initial(device, model, None, unitary=True)
    return _evolve(schedule, device, model, frame, u, rwa, substeps, virtual_z)


def qubit_block(u: np.ndarray, device: DeviceConfig) -> np.ndarray:
    """Restriction of a qubits⊗bus propagator to the bus-vacuum subspace."""
    if u.shape[0] == 2**device.n_qubits:
        return u
    idx = np.arange(2**device.n_qubits) * device.bus_cutoff
    return u[np.ix_(idx, idx)]


def evolve_effective(c: CRCoefficients, t: float) -> np.ndarray:
    """``exp(-i H t)`` for the reduced cross-resonance Hamiltonian."""
    return matexp_hermitian(c.hamiltonian(), t)


def fidelity(u: np.ndarray, v: np.ndarray) -> float:
    """Average gate fidelity ``(|tr(U†V)|² + d) / (d(d+1))``."""
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape != v.shape or u.shape[0] != u.shape[1]:
        raise ValidationError(f"fidelity needs equal square shapes, got {u.shape} and {v.shape}")
    d = u.shape[0]
    overlap = abs(np.trace(u.conj().T @ v)) ** 2
    return float((overlap + d) / (d * (d + 1)))


def state_fidelity(a: np.ndarray, b: np.ndarray) -> float:
    return float(abs(np.vdot(a, b)) ** 2)


def fidelity_up_to_z(u: np.ndarray, v: np.ndarray, n_grid: int = 73) -> float:
    """Best average gate fidelity of ``u`` to ``(Rz(α)⊗Rz(β)) v`` over phases.

    Grid search followed by a local refinement; used to compare gates that
    agree up to single-qubit Z phases.
    """
    from scipy.optimize import minimize

    def rzz(x):
        return np.kron(_rz(x[0]), _rz(x[1]))

    grid = np.linspace(-np.pi, np.pi, n_grid)
    best = max(((fidelity(u, rzz((a, b)) @ v), (a, b)) for a in grid for b in grid))
    res = minimize(lambda x: -fidelity(u, rzz(x) @ v), best[1], method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-14})
    return max(best[0], -float(res.fun))
