"""Transmon-plus-bus device model and the reduced cross-resonance model.

Units: configuration frequencies are in Hz and are converted to angular
frequency (rad/s) with a factor 2π inside the Hamiltonians; times in seconds.

Drive convention
----------------
A channel signal is ``D(t) = Re[d(t) exp(i(ω t + θ(t)))]`` with complex
envelope ``d``, carrier ``ω`` and frame phase ``θ``. In the lab frame it enters
as ``drive_scale * D(t) * σx`` on the driven qubit. In the qubit's rotating
frame with the rotating-wave approximation this becomes

    H = (Ω/2) (Re(w) X - Im(w) Y),    Ω = drive_scale,  w = d exp(i(Δ t + θ))

where ``Δ`` is the carrier detuning from the qubit. A real resonant envelope
rotates about X by ``drive_scale * Σ d_k dt``, so a constant amplitude ``A``
gives ``P1(t) = sin²(drive_scale A t / 2)``. Complex envelopes therefore act as
I/Q quadratures on X and -Y.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import LoweringError, TopologyError, ValidationError
from .qcore import PAULI, check_dim

log = logging.getLogger(__name__)

TWO_PI = 2 * math.pi
CR_TERMS = ("zx", "zy", "zz", "ix", "iy", "iz")


def gaussian_area(duration: int, sigma: float) -> float:
    """Sum of a unit-peak Gaussian sampled at ``k`` centred on ``(duration-1)/2``."""
    k = np.arange(duration)
    c = (duration - 1) / 2
    return float(np.sum(np.exp(-((k - c) ** 2) / (2 * sigma**2))))


def default_drive_scale(snp_duration: int = 160, dt: float = 2e-9 / 9) -> float:
    """Drive scale making a ``snp_duration`` Gaussian at amplitude 0.2 a π/2 rotation."""
    return (math.pi / 2) / (0.2 * gaussian_area(snp_duration, snp_duration / 4) * dt)


@dataclass(frozen=True)
class DeviceConfig:
    """Validated device description (see module docstring for units)."""

    n_qubits: int
    qubit_freq: tuple[float, ...]
    name: str = "device"
    coupling: tuple[float, ...] = ()
    bus_freq: float = 6.5e9
    bus_cutoff: int = 3
    dt: float = 2e-9 / 9
    drive_scale: float = 0.0
    topology: tuple[tuple[int, int], ...] = ()
    snp_duration: int = 160
    rx_gate_duration: int = 320
    cr_duration: int = 736
    cx_cr_duration: int = 448
    cr_sigma: float = 64.0
    cr_risefall: float = 2.0
    amp_max: float = 0.4
    detuning_max: float = 2e6
    drag_beta: float = 0.5
    amp_model: str = "linear"
    cr_rates: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        n = self.n_qubits
        if int(n) != n or n < 1:
            raise ValidationError("n_qubits must be a positive integer")
        if len(self.qubit_freq) != n:
            raise ValidationError(f"qubit_freq must list {n} frequencies")
        if not self.coupling:
            object.__setattr__(self, "coupling", (0.0,) * n)
        if len(self.coupling) != n:
            raise ValidationError(f"coupling must list {n} values")
        if any(not f > 0 for f in self.qubit_freq) or not self.bus_freq > 0:
            raise ValidationError("frequencies must be positive")
        if not self.dt > 0:
            raise ValidationError("dt must be positive")
        if int(self.bus_cutoff) != self.bus_cutoff or self.bus_cutoff < 1:
            raise ValidationError("bus_cutoff must be a positive integer")
        edges = []
        for e in self.topology:
            if len(e) != 2:
                raise ValidationError(f"topology edge {e} must be a pair")
            a, b = int(e[0]), int(e[1])
            if not (0 <= a < n and 0 <= b < n) or a == b:
                raise ValidationError(f"topology edge ({a},{b}) is not valid for {n} qubits")
            edges.append((a, b))
        object.__setattr__(self, "topology", tuple(edges))
        for key in ("snp_duration", "rx_gate_duration", "cr_duration", "cx_cr_duration"):
            v = getattr(self, key)
            if int(v) != v or v <= 0:
                raise ValidationError(f"{key} must be a positive integer")
        if not 0 < self.amp_max <= 1 or not self.detuning_max >= 0:
            raise ValidationError("amp_max must be in (0, 1] and detuning_max >= 0")
        if self.amp_model not in ("linear", "arcsine"):
            raise ValidationError("amp_model must be 'linear' or 'arcsine'")
        if self.drive_scale == 0.0:
            object.__setattr__(self, "drive_scale", default_drive_scale(self.snp_duration, self.dt))
        if not self.drive_scale > 0:
            raise ValidationError("drive_scale must be positive")
        rates = dict(self.cr_rates)
        unknown = set(rates) - set(CR_TERMS)
        if unknown:
            raise ValidationError(f"unknown cr_rates terms {sorted(unknown)}")
        object.__setattr__(
            self, "cr_rates", tuple((k, float(rates.get(k, 0.0))) for k in CR_TERMS)
        )

    # topology -----------------------------------------------------------------
    def has_edge(self, a: int, b: int) -> bool:
        return (a, b) in self.topology or (b, a) in self.topology

    def require_edge(self, control: int, target: int) -> None:
        if not self.has_edge(control, target):
            raise TopologyError(f"({control},{target}) is not a coupled pair of {self.name}")

    def directed_edges(self) -> list[tuple[int, int]]:
        out = set()
        for a, b in self.topology:
            out.add((a, b))
            out.add((b, a))
        return sorted(out)

    def sorted_edges(self) -> list[tuple[int, int]]:
        """Undirected edges as ``(min, max)`` in lexicographic order."""
        return sorted({(min(a, b), max(a, b)) for a, b in self.topology})

    # views --------------------------------------------------------------------
    @property
    def rates(self) -> dict[str, float]:
        return dict(self.cr_rates)

    @property
    def has_bus(self) -> bool:
        return self.bus_cutoff > 1

    def with_rates(self, **rates: float) -> "DeviceConfig":
        merged = self.rates
        merged.update(rates)
        return replace(self, cr_rates=tuple(merged.items()))

    def pure_zx(self) -> "DeviceConfig":
        """Copy whose cross-resonance model keeps only the ZX term."""
        return replace(self, cr_rates=(("zx", self.rates["zx"]),))

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["qubit_freq"] = list(self.qubit_freq)
        d["coupling"] = list(self.coupling)
        d["topology"] = [list(e) for e in self.topology]
        d["cr_rates"] = dict(self.cr_rates)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


_FIELDS = {f.name for f in fields(DeviceConfig)}
_REQUIRED = ("n_qubits", "qubit_freq")


def device_from_dict(d: Mapping[str, Any]) -> DeviceConfig:
    """Build a config from a JSON mapping, rejecting unknown keys."""
    unknown = sorted(set(d) - _FIELDS)
    if unknown:
        raise ValidationError(f"unknown device config keys: {', '.join(unknown)}")
    for key in _REQUIRED:
        if key not in d:
            raise ValidationError(f"device config missing required field {key!r}")
    kw = dict(d)
    try:
        kw["qubit_freq"] = tuple(float(x) for x in kw["qubit_freq"])
        if "coupling" in kw:
            kw["coupling"] = tuple(float(x) for x in kw["coupling"])
        if "topology" in kw:
            kw["topology"] = tuple(tuple(int(v) for v in e) for e in kw["topology"])
        if "cr_rates" in kw:
            if not isinstance(kw["cr_rates"], Mapping):
                raise ValidationError("cr_rates must be an object of term -> rad/s")
            kw["cr_rates"] = tuple((str(k), float(v)) for k, v in kw["cr_rates"].items())
        for key in ("n_qubits", "bus_cutoff", "snp_duration", "rx_gate_duration",
                    "cr_duration", "cx_cr_duration"):
            if key in kw:
                if float(kw[key]) != int(kw[key]):
                    raise ValidationError(f"{key} must be an integer")
                kw[key] = int(kw[key])
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"malformed device config: {exc}") from exc
    return DeviceConfig(**kw)


def load_device(path: str | Path) -> DeviceConfig:
    """Load and validate a JSON device file; logs the resolved values."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    cfg = device_from_dict(data)
    log.info("device %s loaded from %s", cfg.name, path)
    log.debug("resolved device config: %s", json.dumps(cfg.to_dict(), sort_keys=True))
    return cfg


def builtin_device(name: str = "two_qubit") -> DeviceConfig:
    """Load one of the shipped device files by stem."""
    return load_device(Path(__file__).parent / "data" / "devices" / f"{name}.json")


# ------------------------------------------------------------------- full model


def _embed(op: np.ndarray, qubit: int, cfg: DeviceConfig) -> np.ndarray:
    """Single-qubit operator on ``qubit`` embedded in qubits ⊗ bus."""
    out = np.eye(1, dtype=complex)
    for q in range(cfg.n_qubits):
        out = np.kron(out, op if q == qubit else np.eye(2))
    return np.kron(out, np.eye(cfg.bus_cutoff))


def _bus_ops(cfg: DeviceConfig) -> tuple[np.ndarray, np.ndarray]:
    """Bus lowering operator and number operator on the full space."""
    a = np.diag(np.sqrt(np.arange(1, cfg.bus_cutoff)), 1).astype(complex)
    eye = np.eye(2**cfg.n_qubits)
    return np.kron(eye, a), np.kron(eye, a.conj().T @ a)


def full_dim(cfg: DeviceConfig) -> int:
    return (2**cfg.n_qubits) * cfg.bus_cutoff


def static_hamiltonian(cfg: DeviceConfig) -> np.ndarray:
    """Lab-frame drift ``Σ 2πν_i n_i + ω_B a†a + Σ 2πg_i σx_i (a + a†)`` (rad/s).

    ``n_i = (1 - σz_i)/2`` and ``ω_B = 2π bus_freq``. With ``bus_cutoff = 1``
    the bus is absent.
    """
    check_dim(full_dim(cfg), (2**10) * max(cfg.bus_cutoff, 1))
    n_op = np.array([[0, 0], [0, 1]], dtype=complex)
    h = np.zeros((full_dim(cfg),) * 2, dtype=complex)
    for q, nu in enumerate(cfg.qubit_freq):
        h += TWO_PI * nu * _embed(n_op, q, cfg)
    if cfg.has_bus:
        a, num = _bus_ops(cfg)
        h += TWO_PI * cfg.bus_freq * num
        for q, g in enumerate(cfg.coupling):
            h += TWO_PI * g * _embed(PAULI["X"], q, cfg) @ (a + a.conj().T)
    return h


@lru_cache(maxsize=32)
def dressed_frequencies(cfg: DeviceConfig) -> tuple[float, ...]:
    """Qubit transition frequencies (Hz) of the coupled drift Hamiltonian.

    Each single-excitation eigenstate is matched to the bare state it overlaps
    most; without a bus this returns ``qubit_freq``.
    """
    if not cfg.has_bus or not any(cfg.coupling):
        return tuple(cfg.qubit_freq)
    h = static_hamiltonian(cfg)
    w, v = np.linalg.eigh(h)
    ground = int(np.argmax(np.abs(v[0, :])))
    out = []
    for q in range(cfg.n_qubits):
        bare = (1 << (cfg.n_qubits - 1 - q)) * cfg.bus_cutoff
        k = int(np.argmax(np.abs(v[bare, :])))
        out.append(float((w[k] - w[ground]) / TWO_PI))
    return tuple(out)


def channel_frequency(cfg: DeviceConfig, channel, dressed: bool = True) -> float:
    """Nominal carrier (Hz) of a channel: the frame qubit's transition frequency."""
    freqs = dressed_frequencies(cfg) if dressed else cfg.qubit_freq
    return freqs[channel.frame_qubit]


def drive_hamiltonian(
    cfg: DeviceConfig,
    channel,
    envelope_value: complex,
    t: float,
    phase: float = 0.0,
    detuning: float = 0.0,
) -> np.ndarray:
    """Lab-frame drive term ``drive_scale * Re(d e^{i(ω t + φ)}) σx`` (rad/s).

    The carrier is the channel frequency plus ``detuning`` (Hz); a control
    channel drives its control qubit at the target's frequency.
    """
    omega = TWO_PI * (channel_frequency(cfg, channel) + detuning)
    amp = cfg.drive_scale * (complex(envelope_value) * np.exp(1j * (omega * t + phase))).real
    return amp * _embed(PAULI["X"], channel.driven_qubit, cfg)


@dataclass(frozen=True)
class Frame:
    """Interaction picture generated by ``H_f = Σ ω_i n_i + ω_B a†a``.

    ``omega`` holds the diagonal of ``H_f`` on the full qubits⊗bus basis
    (rad/s). ``rwa`` records whether counter-rotating terms are dropped.
    """

    omega: np.ndarray = field(repr=False)
    qubit_omega: tuple[float, ...]
    rwa: bool = True

    def to_rotating(self, state: np.ndarray, t: float) -> np.ndarray:
        """Lab state at time ``t`` → rotating-frame state ``exp(i H_f t) ψ``."""
        return np.exp(1j * self.omega * t).reshape((-1,) + (1,) * (np.ndim(state) - 1)) * state

    def to_lab(self, state: np.ndarray, t: float) -> np.ndarray:
        return np.exp(-1j * self.omega * t).reshape((-1,) + (1,) * (np.ndim(state) - 1)) * state


def frame_diagonal(cfg: DeviceConfig, qubit_omega: tuple[float, ...], bus_omega: float) -> np.ndarray:
    dim = full_dim(cfg)
    idx = np.arange(dim)
    qidx, m = idx // cfg.bus_cutoff, idx % cfg.bus_cutoff
    out = m * bus_omega
    for q, w in enumerate(qubit_omega):
        out = out + ((qidx >> (cfg.n_qubits - 1 - q)) & 1) * w
    return out.astype(float)


def rotating_frame(cfg: DeviceConfig, rwa: bool = True) -> Frame:
    """Frame rotating at each qubit's (dressed) transition and at the bus frequency."""
    qw = tuple(TWO_PI * f for f in dressed_frequencies(cfg))
    return Frame(frame_diagonal(cfg, qw, TWO_PI * cfg.bus_freq), qw, rwa)


# -------------------------------------------------------------- effective CR model


@dataclass(frozen=True)
class CRCoefficients:
    """Rates (rad/s) of ``H = a_x ZX + a_y ZY + a_z ZZ + b_x IX + b_y IY + b_z IZ``.

    The first factor acts on the control qubit, the second on the target.
    """

    a_x: float = 0.0
    a_y: float = 0.0
    a_z: float = 0.0
    b_x: float = 0.0
    b_y: float = 0.0
    b_z: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.as_array())):
            raise ValidationError("CR coefficients must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.a_x, self.a_y, self.a_z, self.b_x, self.b_y, self.b_z])

    @classmethod
    def from_array(cls, v) -> "CRCoefficients":
        return cls(*[float(x) for x in v])

    def hamiltonian(self) -> np.ndarray:
        X, Y, Z, I = PAULI["X"], PAULI["Y"], PAULI["Z"], PAULI["I"]
        a = self.a_x * X + self.a_y * Y + self.a_z * Z
        b = self.b_x * X + self.b_y * Y + self.b_z * Z
        return np.kron(Z, a) + np.kron(I, b)

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


def effective_cr(cfg: DeviceConfig, amp: float, duration: int | None = None) -> CRCoefficients:
    """Flat-top CR rates at drive amplitude ``amp`` (zero frame phase).

    Every term is linear in ``amp`` with the per-unit-amplitude rates of the
    config; ``duration`` does not change instantaneous rates and is accepted
    for interface symmetry with tomography. For a shaped pulse the evolution
    equals :func:`evolve_effective` over the effective time ``Σ shape dt``
    whenever the block Hamiltonians commute sample to sample (zero detuning).
    """
    r = cfg.rates
    mag = abs(amp)
    return CRCoefficients(
        amp * r["zx"], amp * r["zy"], mag * r["zz"], amp * r["ix"], amp * r["iy"], mag * r["iz"]
    )


def calibrate_pi_half(cfg: DeviceConfig, duration: int | None = None) -> float:
    """Amplitude of a ``duration``-sample DRAG pulse (σ = duration/4) giving a π/2 X rotation.

    Uses the rotation-area rule ``drive_scale * amp * Σ g_k dt = π/2``.
    """
    duration = int(duration or cfg.snp_duration)
    return (math.pi / 2) / (cfg.drive_scale * gaussian_area(duration, duration / 4) * cfg.dt)


@dataclass(frozen=True)
class CXCalibration:
    """Echoed-CR parameters: per-half amplitude, CR frame phase, half duration,
    and the virtual Z on the target that cancels the accumulated IZ phase."""

    amp: float
    phase: float
    duration: int
    target_z: float


def cr_effective_time(cfg: DeviceConfig, duration: int) -> float:
    from .pulse_ir import cr_envelope

    return cr_envelope(cfg, 1.0, duration).area() * cfg.dt


def calibrate_cx(cfg: DeviceConfig, control: int, target: int) -> CXCalibration:
    """Choose the CR amplitude so each echo half contributes a π/8 ZX angle."""
    cfg.require_edge(control, target)
    r = cfg.rates
    rho = complex(r["zx"], -r["zy"])
    if abs(rho) == 0:
        raise LoweringError("device has no ZX cross-resonance rate; cannot lower CX")
    tau = cr_effective_time(cfg, cfg.cx_cr_duration)
    amp = (math.pi / 8) / (abs(rho) * tau)
    if amp > cfg.amp_max:
        raise LoweringError(
            f"CX needs CR amplitude {amp:.3f} > amp_max {cfg.amp_max}; lengthen cx_cr_duration"
        )
    phase = -float(np.angle(rho))
    target_z = -4 * amp * r["iz"] * tau
    return CXCalibration(amp, phase, cfg.cx_cr_duration, target_z)
