"""Source, fiber channel and detector imperfection models."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum, IntEnum
from functools import lru_cache

import numpy as np
from scipy import integrate, special

from .errors import ConfigurationError, DomainError
from .photonics import (
    DetectionDistribution,
    Detector,
    PhasePattern,
    TimeBinState,
    cis,
    make_rect_state,
    sample_detection,
)
from .rng import RoundRandom, Stream


class Encoder(str, Enum):
    """How Alice turns a heralded photon into an N-slot pulse train."""

    IMPROVED_DIRECT_PM = "IMPROVED_DIRECT_PM"
    CONVENTIONAL_BS = "CONVENTIONAL_BS"


class Flag(IntEnum):
    OK = 0
    AMBIGUOUS = 1
    DARK_SUSPECT = 2


@dataclass(frozen=True)
class DetectionEvent:
    detector: Detector
    instance: int
    flag: Flag = Flag.OK

    @property
    def single_click(self) -> bool:
        """True when Bob saw exactly one click (he cannot tell a dark count apart)."""
        return self.flag != Flag.AMBIGUOUS


@dataclass(frozen=True)
class SourceConfig:
    scheme: Encoder = Encoder.IMPROVED_DIRECT_PM
    n_slots: int = 3
    slot_period: float = 100.0  # ns
    shaping_loss: float = 0.0
    pair_rate: float = 1e7  # pairs per second

    def __post_init__(self):
        object.__setattr__(self, "scheme", Encoder(self.scheme))
        if self.n_slots < 1:
            raise DomainError(f"n_slots must be >= 1, got {self.n_slots}")
        if not self.slot_period > 0:
            raise ConfigurationError("slot_period must be positive")
        if not 0.0 <= self.shaping_loss < 1.0:
            raise ConfigurationError(f"shaping_loss must lie in [0, 1), got {self.shaping_loss}")
        if not self.pair_rate > 0:
            raise ConfigurationError("pair_rate must be positive")

    @property
    def survival_probability(self) -> float:
        sending = 1.0 / self.n_slots if self.scheme is Encoder.CONVENTIONAL_BS else 1.0
        return (1.0 - self.shaping_loss) * sending


@dataclass(frozen=True)
class ChannelConfig:
    length_km: float = 0.0
    loss_db_per_km: float = 0.0
    common_phase_drift: float = 0.0  # radians per round, identical on every slot

    def __post_init__(self):
        if self.length_km < 0 or self.loss_db_per_km < 0:
            raise ConfigurationError("channel length and loss must be non-negative")

    @property
    def survival_probability(self) -> float:
        return 10.0 ** (-self.length_km * self.loss_db_per_km / 10.0)


@dataclass(frozen=True)
class DetectorConfig:
    efficiency: float = 1.0
    dark_count_prob_per_gate: float = 0.0
    jitter_sigma: float = 0.0  # ns

    def __post_init__(self):
        for name in ("efficiency", "dark_count_prob_per_gate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {value}")
        if self.jitter_sigma < 0:
            raise ConfigurationError("jitter_sigma must be non-negative")


def emit(source: SourceConfig, pattern: PhasePattern, rng: RoundRandom) -> TimeBinState | None:
    """Heralded photon after Alice's encoder, or ``None`` if it was lost.

    The splitter-based encoder is modeled by its aggregate sending efficiency
    ``1/N``; a surviving photon is the ideal rectangular state either way.
    """
    if len(pattern) != source.n_slots:
        raise ConfigurationError(
            f"pattern has {len(pattern)} phases, source has {source.n_slots} slots"
        )
    if rng.uniform(Stream.EMIT) >= source.survival_probability:
        return None
    return make_rect_state(source.n_slots, pattern, source.slot_period)


def transmit(state: TimeBinState, channel: ChannelConfig, rng: RoundRandom) -> TimeBinState | None:
    if rng.uniform(Stream.CHANNEL) >= channel.survival_probability:
        return None
    if channel.common_phase_drift == 0.0:
        return state
    return TimeBinState(
        state.amplitudes * cis(channel.common_phase_drift), state.slot_period
    )


@lru_cache(maxsize=256)
def misbinning_probability(jitter_sigma: float, slot_period: float) -> float:
    """Probability that a click is pushed across one given slot boundary.

    The true arrival time is uniform over the slot and the detector adds
    Gaussian jitter; the result is the chance the recorded time lands before
    the slot start (equal, by symmetry, to landing after its end)::

        p = (1/T) * integral_0^T Phi(-t / sigma) dt
    """
    if jitter_sigma < 0 or slot_period <= 0:
        raise DomainError("need jitter_sigma >= 0 and slot_period > 0")
    if jitter_sigma == 0:
        return 0.0
    value, _ = integrate.quad(
        lambda t: special.ndtr(-t / jitter_sigma),
        0.0,
        slot_period,
        points=[min(jitter_sigma, slot_period)],
        epsabs=1e-15,
        epsrel=1e-12,
    )
    return value / slot_period


def jitter_shift(instance: int, n_instances: int, p_side: float, draw: float) -> int:
    """Displace an instance by -1 (draw < p) or +1 (p <= draw < 2p), clamped."""
    if draw < p_side:
        instance -= 1
    elif draw < 2.0 * p_side:
        instance += 1
    return min(max(instance, 0), n_instances - 1)


def detect(
    dist: DetectionDistribution | None,
    det: DetectorConfig,
    slot_period: float,
    rng: RoundRandom,
    n_slots: int | None = None,
) -> DetectionEvent | None:
    """One detector gate window: signal click, timing jitter and dark counts.

    ``dist=None`` means no photon reached the analyzer; dark counts can still
    fire, which requires ``n_slots``. Several distinct clicking gates make the
    round AMBIGUOUS; a lone dark click is flagged DARK_SUSPECT (a label for
    bookkeeping only, Bob treats it like any other single click).
    """
    if dist is None and n_slots is None:
        raise ConfigurationError("n_slots is required when no photon arrives")
    width = dist.n_instances if dist is not None else n_slots + 1

    signal = None
    if dist is not None and rng.uniform(Stream.DET_EFFICIENCY) < det.efficiency:
        signal = sample_detection(dist, rng.uniform(Stream.DET_OUTCOME))
        if signal is not None and det.jitter_sigma > 0:
            p = misbinning_probability(det.jitter_sigma, slot_period)
            detector, instance = signal
            signal = detector, jitter_shift(instance, width, p, rng.uniform(Stream.DET_JITTER))

    clicks = []
    if signal is not None:
        clicks.append(int(signal[0]) * width + signal[1])
    if det.dark_count_prob_per_gate > 0:
        for gate in range(2 * width):
            if rng.uniform(Stream.DARK_GATE + gate) < det.dark_count_prob_per_gate:
                if gate not in clicks:
                    clicks.append(gate)

    if not clicks:
        return None
    if len(clicks) > 1:
        gate = min(clicks)
        return DetectionEvent(Detector(gate // width), gate % width, Flag.AMBIGUOUS)
    gate = clicks[0]
    flag = Flag.OK if signal is not None else Flag.DARK_SUSPECT
    return DetectionEvent(Detector(gate // width), gate % width, flag)


def max_clock_rate(source: SourceConfig) -> float:
    """Highest round rate in Hz: one photon per ``N * T`` window."""
    return 1e9 / (source.n_slots * source.slot_period)


def dark_gates(n_slots: int) -> int:
    return 2 * (n_slots + 1)


def no_dark_elsewhere(det: DetectorConfig, n_slots: int) -> float:
    """Probability that none of the other ``2(N+1) - 1`` gates fires."""
    return (1.0 - det.dark_count_prob_per_gate) ** (dark_gates(n_slots) - 1)


def small_jitter_misbinning(jitter_sigma: float, slot_period: float) -> float:
    """Leading-order per-boundary estimate ``sigma / (T sqrt(2 pi))``."""
    return jitter_sigma / (slot_period * math.sqrt(2.0 * math.pi))
