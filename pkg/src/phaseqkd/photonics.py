"""Time-bin single-photon states and the unbalanced Mach-Zehnder analyzer.

A photon is a normalized vector of complex amplitudes over ``N`` time slots of
duration ``T``. The analyzer splits it into a short arm and a long arm delayed
by one slot; the output therefore has ``N + 1`` time instances, instance ``j``
combining short-path slot ``j`` with long-path slot ``j - 1``.

Beam-splitter convention: transmission ``1/sqrt(2)``, reflection ``i/sqrt(2)``.
The long arm takes the reflection at the first splitter and the analyzer
phase ``phi_b``. Working the two splitters through gives::

    P(D1, j) = |a_j - exp(i phi_b) a_{j-1}|**2 / 4
    P(D2, j) = |a_j + exp(i phi_b) a_{j-1}|**2 / 4

with ``a_{-1} = a_N = 0``. A phase difference matching ``phi_b`` sends the
interior clicks to D2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DomainError

TWO_PI = 2.0 * math.pi
NORM_TOL = 1e-12


class Detector(IntEnum):
    D1 = 0
    D2 = 1


_QUARTER_TURNS = np.array([1.0 + 0j, 1j, -1.0 + 0j, -1j])


def cis(theta):
    """``exp(i theta)``, exact for whole multiples of pi/2.

    Snapping quarter turns keeps the protocol phases free of rounding residue,
    so e.g. a phase of pi flips a sign exactly and a matched analyzer gives
    an exact zero on the dark detector.
    """
    theta = np.asarray(theta, dtype=float)
    turns = theta / (math.pi / 2)
    k = np.rint(turns)
    snap = np.abs(turns - k) < 1e-12
    out = np.where(snap, _QUARTER_TURNS[np.mod(k, 4).astype(int)], np.exp(1j * theta))
    return out[()] if out.ndim == 0 else out


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PhasePattern:
    """Per-slot phase angles in radians, reduced modulo 2*pi."""

    phases: np.ndarray

    def __post_init__(self):
        phases = np.mod(np.asarray(self.phases, dtype=float).reshape(-1), TWO_PI)
        object.__setattr__(self, "phases", _frozen(phases))

    def __len__(self) -> int:
        return len(self.phases)

    def __eq__(self, other):
        if not isinstance(other, PhasePattern):
            return NotImplemented
        return np.array_equal(self.phases, other.phases)

    def __hash__(self):
        return hash(self.phases.tobytes())


@dataclass(frozen=True, eq=False)
class TimeBinState:
    """Single surviving photon spread over ``N`` time slots.

    ``slot_period`` is the slot duration T in nanoseconds.
    """

    amplitudes: np.ndarray
    slot_period: float = 100.0

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex).reshape(-1)
        if amps.size < 1:
            raise DomainError("a time-bin state needs at least one slot")
        if not self.slot_period > 0:
            raise DomainError(f"slot_period must be positive, got {self.slot_period}")
        norm = float(np.sum(amps.real**2 + amps.imag**2))
        if abs(norm - 1.0) > NORM_TOL:
            raise DomainError(f"state is not normalized (|a|^2 sums to {norm!r})")
        object.__setattr__(self, "amplitudes", _frozen(amps))

    @property
    def n_slots(self) -> int:
        return self.amplitudes.size

    def norm_squared(self) -> float:
        a = self.amplitudes
        return float(np.sum(a.real**2 + a.imag**2))

    def inner(self, other: "TimeBinState") -> complex:
        """<self|other>."""
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def __eq__(self, other):
        if not isinstance(other, TimeBinState):
            return NotImplemented
        return self.slot_period == other.slot_period and np.array_equal(
            self.amplitudes, other.amplitudes
        )

    def __hash__(self):
        return hash((self.amplitudes.tobytes(), self.slot_period))


@dataclass(frozen=True, eq=False)
class DetectionDistribution:
    """Click probabilities over (detector, instance), shape ``(2, N + 1)``.

    Row 0 is D1, row 1 is D2. ``loss_mass`` is the no-click probability owed to
    the interferometer itself, which is zero in the ideal model.
    """

    probs: np.ndarray
    loss_mass: float = 0.0

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        if probs.ndim != 2 or probs.shape[0] != 2 or probs.shape[1] < 2:
            raise ConfigurationError(f"probs must have shape (2, N+1), got {probs.shape}")
        if np.any(probs < 0) or self.loss_mass < 0:
            raise DomainError("probabilities must be non-negative")
        total = float(probs.sum()) + self.loss_mass
        if abs(total - 1.0) > NORM_TOL:
            raise DomainError(f"distribution sums to {total!r}, not 1")
        object.__setattr__(self, "probs", _frozen(probs))

    @property
    def n_slots(self) -> int:
        return self.probs.shape[1] - 1

    @property
    def n_instances(self) -> int:
        return self.probs.shape[1]

    def instance_marginals(self) -> np.ndarray:
        return self.probs.sum(axis=0)

    def outcome_cdf(self) -> np.ndarray:
        """Cumulative probabilities in sampling order, rescaled to end at 1.

        Order: D1 by ascending instance, D2 by ascending instance, then loss.
        """
        flat = np.concatenate([self.probs.reshape(-1), [self.loss_mass]])
        cdf = np.cumsum(flat)
        return cdf / cdf[-1]


def _check_length(pattern: PhasePattern, n: int) -> None:
    if len(pattern) != n:
        raise ConfigurationError(
            f"phase pattern has {len(pattern)} entries but the state has {n} slots"
        )


def make_rect_state(
    n_slots: int, pattern: PhasePattern | Sequence[float], slot_period: float = 100.0
) -> TimeBinState:
    """Rectangular photon of ``n_slots`` equal slots carrying ``pattern``."""
    if n_slots < 1:
        raise DomainError(f"n_slots must be >= 1, got {n_slots}")
    if not isinstance(pattern, PhasePattern):
        pattern = PhasePattern(pattern)
    _check_length(pattern, n_slots)
    amps = cis(pattern.phases) / np.sqrt(n_slots)
    return TimeBinState(amps, slot_period)


def apply_phase_pattern(state: TimeBinState, pattern: PhasePattern | Sequence[float]) -> TimeBinState:
    if not isinstance(pattern, PhasePattern):
        pattern = PhasePattern(pattern)
    _check_length(pattern, state.n_slots)
    return TimeBinState(state.amplitudes * cis(pattern.phases), state.slot_period)


def slot_state(n_slots: int, amplitudes: dict[int, complex], slot_period: float = 100.0) -> TimeBinState:
    """State with the given amplitudes on selected slots and zero elsewhere."""
    amps = np.zeros(n_slots, dtype=complex)
    for k, a in amplitudes.items():
        amps[k] = a
    return TimeBinState(amps, slot_period)


def mz_probabilities(amplitudes: np.ndarray, phi_b: float | np.ndarray) -> np.ndarray:
    """Click probabilities for one state ``(N,)`` or a batch ``(B, N)``.

    Returns an array of shape ``(..., 2, N + 1)``. ``phi_b`` may be a scalar or
    one angle per batch row.
    """
    a = np.asarray(amplitudes, dtype=complex)
    pad = [(0, 0)] * (a.ndim - 1)
    short = np.pad(a, pad + [(0, 1)])
    long_ = np.pad(a, pad + [(1, 0)])
    rot = cis(phi_b)
    if a.ndim > 1 and np.ndim(rot) == 1:
        rot = rot[:, None]
    long_ = rot * long_
    minus = short - long_
    plus = short + long_
    p1 = (minus.real**2 + minus.imag**2) / 4.0
    p2 = (plus.real**2 + plus.imag**2) / 4.0
    return np.stack([p1, p2], axis=-2)


def mz_distribution(state: TimeBinState, phi_b: float) -> DetectionDistribution:
    """Detection distribution at the analyzer output for analyzer phase ``phi_b``."""
    return DetectionDistribution(mz_probabilities(state.amplitudes, phi_b), 0.0)


def sample_detection(dist: DetectionDistribution, draw: float) -> tuple[Detector, int] | None:
    """Inverse-CDF sample of one outcome; ``None`` when the draw lands on loss."""
    cdf = dist.outcome_cdf()
    k = int(np.searchsorted(cdf, draw, side="right"))
    width = dist.n_instances
    if k >= 2 * width:
        return None
    return Detector(k // width), k % width


def interferometer_transfer_matrix(n_slots: int, phi_b: float) -> np.ndarray:
    """Amplitude map from ``N`` input slots to ``2 (N + 1)`` output modes.

    Built from explicit beam-splitter matrices rather than the closed-form
    click probabilities, so it can serve as an independent check on them. Rows
    are ordered D1 instances 0..N then D2 instances 0..N.
    """
    t = 1.0 / math.sqrt(2.0)
    r = 1j / math.sqrt(2.0)
    # Each splitter maps (input port, output port): port 0 continues straight.
    bs = np.array([[t, r], [r, t]])
    width = n_slots + 1
    out = np.zeros((2 * width, n_slots), dtype=complex)
    arm_phase = [1.0, np.exp(1j * phi_b)]
    for k in range(n_slots):
        for arm in (0, 1):
            instance = k + arm
            amp_arm = bs[0, arm] * arm_phase[arm]
            for port in (0, 1):
                out[port * width + instance, k] += amp_arm * bs[arm, port]
    return out
