"""Alice/Bob round logic for PE-BB84 and N-slot DPS, sifting, and Eve.

Bit convention for both protocols: a D2 click means bit 0, a D1 click bit 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum, IntEnum

import numpy as np

from .devices import DetectionEvent, Flag
from .errors import ConfigurationError, DomainError
from .photonics import (
    Detector,
    PhasePattern,
    TimeBinState,
    cis,
    make_rect_state,
    mz_distribution,
    sample_detection,
    slot_state,
)
from .rng import RoundRandom, Stream

__all__ = [
    "Basis",
    "Bb84AliceChoice",
    "DpsAliceChoice",
    "DetectionEvent",
    "EveAnalyzer",
    "Flag",
    "SiftOutcome",
    "Verdict",
    "bb84_alice_prepare",
    "bb84_bob_measure_and_sift",
    "bb84_eve_intercept_resend",
    "detector_bit",
    "dps_alice_prepare",
    "dps_bob_sift",
    "eve_intercept_resend",
]


class Basis(IntEnum):
    Z = 0  # phase differences {0, pi}
    X = 1  # phase differences {pi/2, 3pi/2}

    @property
    def analyzer_phase(self) -> float:
        return 0.0 if self is Basis.Z else math.pi / 2


class Verdict(IntEnum):
    KEY = 0
    DISCARD_EDGE = 1
    DISCARD_BASIS_MISMATCH = 2
    DISCARD_NO_CLICK = 3
    DISCARD_AMBIGUOUS = 4


class EveAnalyzer(str, Enum):
    """How Eve reads a BB84 photon.

    PROJECTIVE is an ideal two-outcome measurement in her basis (the textbook
    intercept/resend attack). INTERFEROMETER uses a copy of Bob's analyzer and
    resends a single-slot photon when she only sees an edge click.
    """

    PROJECTIVE = "projective"
    INTERFEROMETER = "interferometer"


def detector_bit(detector: Detector) -> int:
    return 0 if detector is Detector.D2 else 1


@dataclass(frozen=True)
class Bb84AliceChoice:
    basis: Basis
    bit: int

    def __post_init__(self):
        object.__setattr__(self, "basis", Basis(self.basis))
        if self.bit not in (0, 1):
            raise DomainError(f"bit must be 0 or 1, got {self.bit}")

    @property
    def phase_difference(self) -> float:
        return self.basis.analyzer_phase + math.pi * self.bit

    @property
    def pattern(self) -> PhasePattern:
        return PhasePattern([0.0, self.phase_difference])


@dataclass(frozen=True)
class DpsAliceChoice:
    """Slot phases in {0, pi}, stored as their 0/1 indicator ``phase_bits``."""

    phase_bits: tuple[int, ...]

    def __post_init__(self):
        bits = tuple(int(b) for b in self.phase_bits)
        if len(bits) < 2:
            raise DomainError("DPS needs at least two slots")
        if any(b not in (0, 1) for b in bits):
            raise DomainError("DPS slot phases must be 0 or pi")
        object.__setattr__(self, "phase_bits", bits)

    @classmethod
    def from_phases(cls, phases) -> "DpsAliceChoice":
        bits = []
        for p in phases:
            q = math.remainder(p, 2 * math.pi)
            if abs(q) < 1e-9:
                bits.append(0)
            elif abs(abs(q) - math.pi) < 1e-9:
                bits.append(1)
            else:
                raise DomainError(f"DPS slot phase must be 0 or pi, got {p}")
        return cls(tuple(bits))

    @property
    def n_slots(self) -> int:
        return len(self.phase_bits)

    @property
    def slot_phases(self) -> tuple[float, ...]:
        return tuple(math.pi * b for b in self.phase_bits)

    @property
    def pattern(self) -> PhasePattern:
        return PhasePattern(self.slot_phases)

    @property
    def key_bits(self) -> tuple[int, ...]:
        """Bit carried at interior instance k = 1..N-1 (index k-1)."""
        b = self.phase_bits
        return tuple(b[k] ^ b[k - 1] for k in range(1, len(b)))

    def bit_at(self, instance: int) -> int:
        return self.phase_bits[instance] ^ self.phase_bits[instance - 1]


@dataclass(frozen=True)
class SiftOutcome:
    verdict: Verdict
    alice_bit: int | None = None
    bob_bit: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "verdict", Verdict(self.verdict))
        is_key = self.verdict is Verdict.KEY
        if (self.alice_bit is not None) != is_key or (self.bob_bit is not None) != is_key:
            raise ConfigurationError("key bits are present exactly when the verdict is KEY")

    @property
    def is_error(self) -> bool:
        return self.verdict is Verdict.KEY and self.alice_bit != self.bob_bit


def bb84_alice_prepare(rng: RoundRandom) -> Bb84AliceChoice:
    basis = Basis.Z if rng.uniform(Stream.ALICE_BASIS) < 0.5 else Basis.X
    bit = 0 if rng.uniform(Stream.ALICE_BIT) < 0.5 else 1
    return Bb84AliceChoice(basis, bit)


def bb84_bob_basis(rng: RoundRandom) -> Basis:
    return Basis.Z if rng.uniform(Stream.BOB_BASIS) < 0.5 else Basis.X


def dps_alice_prepare(n_slots: int, rng: RoundRandom) -> DpsAliceChoice:
    if n_slots < 2:
        raise DomainError("DPS needs at least two slots")
    bits = tuple(0 if rng.uniform(Stream.DPS_PHASE + k) < 0.5 else 1 for k in range(n_slots))
    return DpsAliceChoice(bits)


def _precheck(event: DetectionEvent | None) -> Verdict | None:
    if event is None:
        return Verdict.DISCARD_NO_CLICK
    if not event.single_click:
        return Verdict.DISCARD_AMBIGUOUS
    return None


def bb84_bob_measure_and_sift(
    choice: Bb84AliceChoice, event: DetectionEvent | None, bob_basis: Basis
) -> SiftOutcome:
    """Sift one BB84 round. ``event`` must come from an analyzer set to Bob's basis."""
    if Basis(bob_basis) is not choice.basis:
        return SiftOutcome(Verdict.DISCARD_BASIS_MISMATCH)
    verdict = _precheck(event)
    if verdict is not None:
        return SiftOutcome(verdict)
    if event.instance != 1:
        return SiftOutcome(Verdict.DISCARD_EDGE)
    return SiftOutcome(Verdict.KEY, choice.bit, detector_bit(event.detector))


def dps_bob_sift(choice: DpsAliceChoice, event: DetectionEvent | None) -> SiftOutcome:
    """Sift one DPS round; Bob's analyzer phase is 0."""
    verdict = _precheck(event)
    if verdict is not None:
        return SiftOutcome(verdict)
    if not 1 <= event.instance <= choice.n_slots - 1:
        return SiftOutcome(Verdict.DISCARD_EDGE)
    return SiftOutcome(Verdict.KEY, choice.bit_at(event.instance), detector_bit(event.detector))


def resend_from_click(
    n_slots: int, detector: Detector, instance: int, phi: float, slot_period: float
) -> TimeBinState:
    """Photon consistent with one analyzer click.

    An interior click at instance j reveals the phase step between slots j-1
    and j (``phi`` for D2, ``phi + pi`` for D1); an edge click only reveals
    which end slot the photon sat in.
    """
    if instance == 0:
        return slot_state(n_slots, {0: 1.0}, slot_period)
    if instance == n_slots:
        return slot_state(n_slots, {n_slots - 1: 1.0}, slot_period)
    step = phi + (math.pi if detector is Detector.D1 else 0.0)
    h = 1.0 / math.sqrt(2.0)
    return slot_state(n_slots, {instance - 1: h, instance: h * cis(step)}, slot_period)


def eve_intercept_resend(state: TimeBinState, rng: RoundRandom) -> TimeBinState | None:
    """DPS intercept/resend with an analyzer identical to Bob's."""
    click = sample_detection(mz_distribution(state, 0.0), rng.uniform(Stream.EVE_CLICK))
    if click is None:
        return None
    detector, instance = click
    return resend_from_click(state.n_slots, detector, instance, 0.0, state.slot_period)


def bb84_eve_intercept_resend(
    state: TimeBinState,
    rng: RoundRandom,
    analyzer: EveAnalyzer = EveAnalyzer.PROJECTIVE,
) -> TimeBinState | None:
    """BB84 intercept/resend in a uniformly random basis."""
    if state.n_slots != 2:
        raise ConfigurationError("BB84 photons have exactly two slots")
    basis = Basis.Z if rng.uniform(Stream.EVE_BASIS) < 0.5 else Basis.X
    phi = basis.analyzer_phase
    if EveAnalyzer(analyzer) is EveAnalyzer.PROJECTIVE:
        a0, a1 = state.amplitudes
        overlap = (a0 + cis(-phi) * a1) / math.sqrt(2.0)
        p_zero = overlap.real**2 + overlap.imag**2
        bit = 0 if rng.uniform(Stream.EVE_CLICK) < p_zero else 1
        return make_rect_state(2, [0.0, phi + math.pi * bit], state.slot_period)
    click = sample_detection(mz_distribution(state, phi), rng.uniform(Stream.EVE_CLICK))
    if click is None:
        return None
    detector, instance = click
    return resend_from_click(2, detector, instance, phi, state.slot_period)
