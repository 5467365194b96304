"""Closed-form efficiencies, click ratios, attack error rates and rates.

Also provides :func:`enumerate_round_statistics`, a brute-force enumeration of
one protocol round over every random choice. It builds the analyzer from
explicit beam-splitter matrices and its own resend rule, so it is independent
of the Monte Carlo pipeline it is used to check.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction

import numpy as np

from .devices import (
    ChannelConfig,
    DetectorConfig,
    Encoder,
    SourceConfig,
    max_clock_rate,
    misbinning_probability,
)
from .errors import DomainError
from .photonics import interferometer_transfer_matrix
from .protocols import EveAnalyzer


class Protocol(str, Enum):
    BB84 = "BB84"
    DPS = "DPS"


@dataclass(frozen=True)
class EfficiencyReport:
    sending: Fraction
    receiving: Fraction
    total: Fraction
    scheme: Encoder
    n_slots: int

    def __post_init__(self):
        if self.total != self.sending * self.receiving:
            raise DomainError("total efficiency must equal sending x receiving")
        for name in ("sending", "receiving", "total"):
            if not 0 <= getattr(self, name) <= 1:
                raise DomainError(f"{name} efficiency outside [0, 1]")


def _report(sending: Fraction, receiving: Fraction, improved: bool, n: int) -> EfficiencyReport:
    scheme = Encoder.IMPROVED_DIRECT_PM if improved else Encoder.CONVENTIONAL_BS
    return EfficiencyReport(sending, receiving, sending * receiving, scheme, n)


def bb84_efficiency(improved: bool) -> EfficiencyReport:
    # interior instance 1/2, basis agreement 1/2
    sending = Fraction(1) if improved else Fraction(1, 2)
    return _report(sending, Fraction(1, 4), improved, 2)


def dps_efficiency(n_slots: int, improved: bool) -> EfficiencyReport:
    if n_slots < 2:
        raise DomainError(f"DPS needs n_slots >= 2, got {n_slots}")
    sending = Fraction(1) if improved else Fraction(1, n_slots)
    return _report(sending, Fraction(n_slots - 1, n_slots), improved, n_slots)


def efficiency(protocol: Protocol, n_slots: int, improved: bool) -> EfficiencyReport:
    if Protocol(protocol) is Protocol.BB84:
        if n_slots != 2:
            raise DomainError("PE-BB84 uses two slots")
        return bb84_efficiency(improved)
    return dps_efficiency(n_slots, improved)


def instance_marginals(n_slots: int) -> tuple[Fraction, ...]:
    """Click probability per time instance for a rectangular N-slot photon."""
    if n_slots < 1:
        raise DomainError(f"n_slots must be >= 1, got {n_slots}")
    weights = [1] + [2] * (n_slots - 1) + [1]
    return tuple(Fraction(w, 2 * n_slots) for w in weights)


def intercept_resend_qber(
    protocol: Protocol,
    attack_fraction=1,
    analyzer: EveAnalyzer = EveAnalyzer.PROJECTIVE,
):
    """Sifted QBER when Eve intercepts a fraction of the rounds.

    DPS gives 1/4 for every N >= 2: per attacked photon the key probability
    stays (N-1)/N while the expected number of wrong key bits is (N-1)/(4N).
    BB84 gives 1/4 with a projective Eve and 3/8 when she uses an
    interferometer, since her edge clicks carry no phase information.
    Attacked and clean rounds sift at the same rate, so the QBER is linear in
    the attacked fraction.
    """
    if not 0 <= attack_fraction <= 1:
        raise DomainError("attack_fraction must lie in [0, 1]")
    if Protocol(protocol) is Protocol.DPS:
        full = Fraction(1, 4)
    elif EveAnalyzer(analyzer) is EveAnalyzer.PROJECTIVE:
        full = Fraction(1, 4)
    else:
        full = Fraction(3, 8)
    return full * attack_fraction


def sifted_rate(
    source: SourceConfig,
    channel: ChannelConfig,
    detector: DetectorConfig,
    report: EfficiencyReport,
) -> float:
    """Sifted key bits per second."""
    round_rate = min(source.pair_rate, max_clock_rate(source))
    return (
        round_rate
        * (1.0 - source.shaping_loss)
        * float(report.sending)
        * channel.survival_probability
        * detector.efficiency
        * float(report.receiving)
    )


@dataclass(frozen=True)
class RoundExpectation:
    key_probability: float
    error_probability: float

    @property
    def qber(self) -> float | None:
        if self.key_probability == 0:
            return None
        return self.error_probability / self.key_probability


def _interior(protocol: Protocol, n: int) -> range:
    return range(1, 2) if protocol is Protocol.BB84 else range(1, n)


def expected_round_statistics(
    protocol: Protocol,
    source: SourceConfig,
    channel: ChannelConfig | None = None,
    detector: DetectorConfig | None = None,
    attack_fraction: float = 0.0,
    analyzer: EveAnalyzer = EveAnalyzer.PROJECTIVE,
    max_enumeration_slots: int = 10,
) -> RoundExpectation | None:
    """Per-round probability of a sifted bit and of a wrong sifted bit.

    Without Eve this is closed form for any N and covers loss, detector
    efficiency, timing jitter and dark counts. With Eve it falls back to
    :func:`enumerate_round_statistics`, and returns ``None`` above
    ``max_enumeration_slots``.
    """
    protocol = Protocol(protocol)
    channel = channel or ChannelConfig()
    detector = detector or DetectorConfig()
    n = source.n_slots
    if attack_fraction > 0:
        if n > max_enumeration_slots:
            return None
        return enumerate_round_statistics(
            protocol, source, channel, detector, attack_fraction, analyzer
        )

    p = misbinning_probability(detector.jitter_sigma, source.slot_period)
    marg = [float(m) for m in instance_marginals(n)]
    width = n + 1
    basis_match = 0.5 if protocol is Protocol.BB84 else 1.0
    signal = source.survival_probability * channel.survival_probability * detector.efficiency
    d = detector.dark_count_prob_per_gate
    quiet = (1.0 - d) ** (2 * width - 1)

    key_signal = err_signal = 0.0
    for k in _interior(protocol, n):
        stay = marg[k] * (1.0 - 2.0 * p)
        moved_in = p * (marg[k - 1] + (marg[k + 1] if k + 1 < width else 0.0))
        key_signal += stay + moved_in
        # a displaced click carries a bit unrelated to the one Alice sifts
        err_signal += moved_in / 2.0
    n_interior_gates = 2 * len(_interior(protocol, n))
    dark_key = (1.0 - signal) * d * quiet * n_interior_gates

    key = basis_match * (signal * quiet * key_signal + dark_key)
    err = basis_match * (signal * quiet * err_signal + dark_key / 2.0)
    return RoundExpectation(float(key), float(err))


def _jitter_matrix(width: int, p: float) -> np.ndarray:
    """Column-stochastic instance displacement with clamping at the ends."""
    m = np.zeros((width, width))
    for j in range(width):
        m[max(j - 1, 0), j] += p
        m[min(j + 1, width - 1), j] += p
        m[j, j] += 1.0 - 2.0 * p
    return m


def _eve_resends(amps: np.ndarray, phi: float, analyzer: EveAnalyzer, n: int):
    """(probability, resent amplitudes) for every outcome of Eve's measurement."""
    if analyzer is EveAnalyzer.PROJECTIVE:
        out = []
        for bit in (0, 1):
            ket = np.array([1.0, np.exp(1j * (phi + math.pi * bit))]) / math.sqrt(2.0)
            prob = abs(np.vdot(ket, amps)) ** 2
            out.append((prob, ket))
        return out
    gates = np.abs(interferometer_transfer_matrix(n, phi) @ amps) ** 2
    width = n + 1
    out = []
    for gate, prob in enumerate(gates):
        if prob < 1e-15:
            continue
        port, j = divmod(gate, width)
        resent = np.zeros(n, dtype=complex)
        if j == 0:
            resent[0] = 1.0
        elif j == n:
            resent[n - 1] = 1.0
        else:
            # port 0 (D1) means the step was phi + pi
            resent[j - 1] = 1.0 / math.sqrt(2.0)
            resent[j] = np.exp(1j * (phi + math.pi * (port == 0))) / math.sqrt(2.0)
        out.append((prob, resent))
    return out


def enumerate_round_statistics(
    protocol: Protocol,
    source: SourceConfig,
    channel: ChannelConfig | None = None,
    detector: DetectorConfig | None = None,
    attack_fraction: float = 0.0,
    analyzer: EveAnalyzer = EveAnalyzer.PROJECTIVE,
) -> RoundExpectation:
    """Exact key and error probabilities by enumerating every branch of a round.

    Branches: Alice's choice, Bob's basis (BB84), whether Eve attacks, Eve's
    basis and outcome, and the resulting gate probabilities at Bob after
    jitter and dark counts. Cost grows as 2**N for DPS.
    """
    protocol = Protocol(protocol)
    analyzer = EveAnalyzer(analyzer)
    channel = channel or ChannelConfig()
    detector = detector or DetectorConfig()
    n = source.n_slots
    width = n + 1
    gates = 2 * width
    arrive = source.survival_probability * channel.survival_probability
    eta = detector.efficiency
    d = detector.dark_count_prob_per_gate
    quiet = (1.0 - d) ** (gates - 1)
    jit = _jitter_matrix(width, misbinning_probability(detector.jitter_sigma, source.slot_period))
    drift = np.exp(1j * channel.common_phase_drift)

    if protocol is Protocol.BB84:
        if n != 2:
            raise DomainError("PE-BB84 uses two slots")
        choices = []
        for basis, bit in itertools.product((0, 1), (0, 1)):
            amps = np.array([1.0, np.exp(1j * (basis * math.pi / 2 + bit * math.pi))]) / math.sqrt(2)
            choices.append((0.25, amps, basis, {1: bit}))
        bob_settings = [(0.5, 0, 0.0), (0.5, 1, math.pi / 2)]
        eve_phis = [(0.5, 0.0), (0.5, math.pi / 2)]
    else:
        choices = []
        for bits in itertools.product((0, 1), repeat=n):
            amps = np.exp(1j * math.pi * np.array(bits)) / math.sqrt(n)
            key_bits = {k: bits[k] ^ bits[k - 1] for k in range(1, n)}
            choices.append((0.5**n, amps, None, key_bits))
        bob_settings = [(1.0, None, 0.0)]
        eve_phis = [(1.0, 0.0)]
        analyzer = EveAnalyzer.INTERFEROMETER

    key = err = 0.0
    for w_alice, amps, alice_basis, key_bits in choices:
        arrivals = [(1.0 - attack_fraction, amps)]
        if attack_fraction > 0:
            for w_eb, phi_e in eve_phis:
                for prob, resent in _eve_resends(amps, phi_e, analyzer, n):
                    arrivals.append((attack_fraction * w_eb * prob, resent))
        for w_bob, bob_basis, phi_b in bob_settings:
            if protocol is Protocol.BB84 and bob_basis != alice_basis:
                continue
            transfer = interferometer_transfer_matrix(n, phi_b)
            signal = np.zeros(gates)
            for w_arr, arr in arrivals:
                g = np.abs(transfer @ (drift * arr)) ** 2
                signal += w_arr * g
            signal *= arrive * eta
            per_port = signal.reshape(2, width)
            per_port = (jit @ per_port.T).T
            single = per_port * quiet + (1.0 - arrive * eta) * d * quiet
            for j, alice_bit in key_bits.items():
                for port in (0, 1):
                    bob_bit = 1 if port == 0 else 0
                    mass = w_alice * w_bob * single[port, j]
                    key += mass
                    if bob_bit != alice_bit:
                        err += mass
    return RoundExpectation(float(key), float(err))
