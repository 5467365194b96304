"""Deterministic Monte Carlo runs of the key-distribution pipeline.

Each round draws all of its randomness from ``(master_seed, round_index)``
through :mod:`phaseqkd.rng`. :func:`run_round` composes the public device and
protocol operations one round at a time and is the reference. Bulk runs use
:func:`simulate_block`, a numpy transcription of the same pipeline that
consumes the same draws, so a block reproduces ``run_round`` round for round.
Blocks are fixed by ``block_size`` alone and their integer counters are summed,
so results do not depend on the number of workers.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, NamedTuple

import numpy as np

from . import analytics
from .analytics import Protocol
from .devices import (
    ChannelConfig,
    DetectionEvent,
    DetectorConfig,
    Encoder,
    Flag,
    SourceConfig,
    detect,
    emit,
    misbinning_probability,
    transmit,
)
from .errors import ConfigurationError
from .photonics import cis, mz_distribution, mz_probabilities
from .protocols import (
    Basis,
    Bb84AliceChoice,
    DpsAliceChoice,
    EveAnalyzer,
    SiftOutcome,
    Verdict,
    bb84_alice_prepare,
    bb84_bob_basis,
    bb84_bob_measure_and_sift,
    bb84_eve_intercept_resend,
    dps_alice_prepare,
    dps_bob_sift,
    eve_intercept_resend,
)
from .rng import MASK64, RoundRandom, Stream, mix64, round_keys, uniform_array

log = logging.getLogger(__name__)

DEFAULT_BLOCK_SIZE = 1 << 16
Z_GATE = 4.0


class Scheme(str, Enum):
    IMPROVED = "IMPROVED"
    CONVENTIONAL = "CONVENTIONAL"

    @property
    def encoder(self) -> Encoder:
        return Encoder.IMPROVED_DIRECT_PM if self is Scheme.IMPROVED else Encoder.CONVENTIONAL_BS


@dataclass(frozen=True)
class ExperimentConfig:
    protocol: Protocol
    source: SourceConfig
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    trials: int = 1_000_000
    master_seed: int = 0
    attack_fraction: float = 0.0
    eve_analyzer: EveAnalyzer = EveAnalyzer.PROJECTIVE
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "protocol", Protocol(self.protocol))
        object.__setattr__(self, "eve_analyzer", EveAnalyzer(self.eve_analyzer))
        if self.trials < 1:
            raise ConfigurationError(f"trials must be >= 1, got {self.trials}")
        if self.source.n_slots < 2:
            raise ConfigurationError("n_slots must be >= 2")
        if self.protocol is Protocol.BB84 and self.source.n_slots != 2:
            raise ConfigurationError("PE-BB84 uses n_slots = 2")
        if not 0.0 <= self.attack_fraction <= 1.0:
            raise ConfigurationError("attack_fraction must lie in [0, 1]")
        if not 0 <= self.master_seed <= MASK64:
            raise ConfigurationError("master_seed must be a 64-bit unsigned integer")

    @classmethod
    def create(
        cls,
        protocol: Protocol | str,
        scheme: Scheme | str = Scheme.IMPROVED,
        n_slots: int | None = None,
        **kwargs,
    ) -> "ExperimentConfig":
        """Shorthand taking the scheme and slot count instead of a SourceConfig."""
        protocol = Protocol(protocol)
        if n_slots is None:
            n_slots = 2 if protocol is Protocol.BB84 else 3
        source_kw = {k: kwargs.pop(k) for k in ("slot_period", "shaping_loss", "pair_rate") if k in kwargs}
        source = SourceConfig(Scheme(scheme).encoder, n_slots, **source_kw)
        return cls(protocol, source, **kwargs)

    @property
    def n_slots(self) -> int:
        return self.source.n_slots

    @property
    def scheme(self) -> Scheme:
        return Scheme.IMPROVED if self.source.scheme is Encoder.IMPROVED_DIRECT_PM else Scheme.CONVENTIONAL


class ClassicalMessage(NamedTuple):
    sender: str
    kind: str
    value: object


@dataclass(frozen=True)
class TrialRecord:
    round_index: int
    alice: Bb84AliceChoice | DpsAliceChoice
    bob_basis: Basis | None
    emitted: bool
    attacked: bool
    arrived: bool
    event: DetectionEvent | None
    outcome: SiftOutcome
    messages: tuple[ClassicalMessage, ...] = ()


def run_round(config: ExperimentConfig, round_index: int) -> TrialRecord:
    """prepare -> emit -> [Eve] -> transmit -> analyzer -> detect -> sift."""
    rng = RoundRandom(config.master_seed, round_index)
    n = config.n_slots
    bb84 = config.protocol is Protocol.BB84

    if bb84:
        alice = bb84_alice_prepare(rng)
        bob_basis = bb84_bob_basis(rng)
        phi_b = bob_basis.analyzer_phase
    else:
        alice = dps_alice_prepare(n, rng)
        bob_basis = None
        phi_b = 0.0

    state = emit(config.source, alice.pattern, rng)
    emitted = state is not None
    messages = [ClassicalMessage("alice", "trigger", emitted)]

    attacked = False
    if state is not None and rng.uniform(Stream.EVE_GATE) < config.attack_fraction:
        attacked = True
        if bb84:
            state = bb84_eve_intercept_resend(state, rng, config.eve_analyzer)
        else:
            state = eve_intercept_resend(state, rng)

    if state is not None:
        state = transmit(state, config.channel, rng)
    arrived = state is not None

    dist = mz_distribution(state, phi_b) if state is not None else None
    event = detect(dist, config.detector, config.source.slot_period, rng, n_slots=n)

    if bb84:
        outcome = bb84_bob_measure_and_sift(alice, event, bob_basis)
        messages.append(ClassicalMessage("bob", "basis", bob_basis.name))
        messages.append(ClassicalMessage("alice", "basis", alice.basis.name))
    else:
        outcome = dps_bob_sift(alice, event)
    if event is not None and event.single_click:
        messages.append(ClassicalMessage("bob", "instance", event.instance))
    messages.append(ClassicalMessage("alice", "verdict", outcome.verdict.name))

    return TrialRecord(
        round_index, alice, bob_basis, emitted, attacked, arrived, event, outcome, tuple(messages)
    )


class BlockResult(NamedTuple):
    """Per-round outcomes of a block; -1 marks an absent detector/instance/flag/bit."""

    verdict: np.ndarray
    alice_bit: np.ndarray
    bob_bit: np.ndarray
    detector: np.ndarray
    instance: np.ndarray
    flag: np.ndarray
    emitted: np.ndarray
    attacked: np.ndarray
    arrived: np.ndarray


def _sample_rows(probs: np.ndarray, draws: np.ndarray) -> np.ndarray:
    """Inverse-CDF sampling per row over flattened (detector, instance) outcomes."""
    flat = probs.reshape(probs.shape[0], -1)
    flat = np.concatenate([flat, np.zeros((flat.shape[0], 1))], axis=1)
    cdf = np.cumsum(flat, axis=1)
    cdf = cdf / cdf[:, -1:]
    return (cdf <= draws[:, None]).sum(axis=1)


def _resend_rows(n: int, gate: np.ndarray, phi: np.ndarray | float) -> np.ndarray:
    width = n + 1
    det, inst = np.divmod(gate, width)
    out = np.zeros((gate.size, n), dtype=complex)
    rows = np.arange(gate.size)
    h = 1.0 / math.sqrt(2.0)
    step = np.broadcast_to(np.asarray(phi, dtype=float), gate.shape) + np.where(det == 0, math.pi, 0.0)
    first = inst == 0
    last = inst == n
    mid = ~(first | last)
    out[rows[first], 0] = 1.0
    out[rows[last], n - 1] = 1.0
    out[rows[mid], inst[mid] - 1] = h
    out[rows[mid], inst[mid]] = h * cis(step[mid])
    return out


def simulate_block(config: ExperimentConfig, start: int, stop: int) -> BlockResult:
    """Vectorized rounds ``start <= index < stop``."""
    keys = round_keys(config.master_seed, start, stop)
    size = stop - start
    n = config.n_slots
    width = n + 1
    gates = 2 * width
    bb84 = config.protocol is Protocol.BB84

    def u(stream: int) -> np.ndarray:
        return uniform_array(keys, stream)

    if bb84:
        a_basis = (u(Stream.ALICE_BASIS) >= 0.5).astype(np.int64)
        a_bit = (u(Stream.ALICE_BIT) >= 0.5).astype(np.int64)
        b_basis = (u(Stream.BOB_BASIS) >= 0.5).astype(np.int64)
        step = np.where(a_basis == 1, math.pi / 2, 0.0) + math.pi * a_bit
        phases = np.mod(np.stack([np.zeros(size), step], axis=1), 2.0 * math.pi)
        phi_b = np.where(b_basis == 1, math.pi / 2, 0.0)
    else:
        bits = np.stack([(u(Stream.DPS_PHASE + k) >= 0.5) for k in range(n)], axis=1).astype(np.int64)
        phases = np.mod(math.pi * bits, 2.0 * math.pi)
        phi_b = 0.0
    amps = cis(phases) / np.sqrt(n)

    emitted = u(Stream.EMIT) < config.source.survival_probability
    present = emitted.copy()

    attacked = np.zeros(size, dtype=bool)
    if config.attack_fraction > 0:
        attacked = present & (u(Stream.EVE_GATE) < config.attack_fraction)
        idx = np.flatnonzero(attacked)
        if idx.size:
            eve_draw = u(Stream.EVE_CLICK)[idx]
            if bb84:
                phi_e = np.where(u(Stream.EVE_BASIS)[idx] >= 0.5, math.pi / 2, 0.0)
                sub = amps[idx]
                if config.eve_analyzer is EveAnalyzer.PROJECTIVE:
                    overlap = (sub[:, 0] + cis(-phi_e) * sub[:, 1]) / math.sqrt(2.0)
                    p_zero = overlap.real**2 + overlap.imag**2
                    e_bit = (eve_draw >= p_zero).astype(np.int64)
                    e_phases = np.mod(
                        np.stack([np.zeros(idx.size), phi_e + math.pi * e_bit], axis=1), 2.0 * math.pi
                    )
                    amps[idx] = cis(e_phases) / np.sqrt(2)
                else:
                    gate = _sample_rows(mz_probabilities(sub, phi_e), eve_draw)
                    amps[idx] = _resend_rows(n, gate, phi_e)
            else:
                gate = _sample_rows(mz_probabilities(amps[idx], 0.0), eve_draw)
                amps[idx] = _resend_rows(n, gate, 0.0)

    arrived = present & (u(Stream.CHANNEL) < config.channel.survival_probability)
    if config.channel.common_phase_drift != 0.0:
        amps = amps * cis(config.channel.common_phase_drift)

    signal_gate = np.full(size, -1, dtype=np.int64)
    clicked = arrived & (u(Stream.DET_EFFICIENCY) < config.detector.efficiency)
    idx = np.flatnonzero(clicked)
    if idx.size:
        phi_rows = phi_b[idx] if bb84 else 0.0
        gate = _sample_rows(mz_probabilities(amps[idx], phi_rows), u(Stream.DET_OUTCOME)[idx])
        if config.detector.jitter_sigma > 0:
            p = misbinning_probability(config.detector.jitter_sigma, config.source.slot_period)
            det, inst = np.divmod(gate, width)
            draw = u(Stream.DET_JITTER)[idx]
            inst = inst - (draw < p) + ((draw >= p) & (draw < 2.0 * p))
            gate = det * width + np.clip(inst, 0, width - 1)
        signal_gate[idx] = gate

    has_signal = signal_gate >= 0
    d = config.detector.dark_count_prob_per_gate
    if d > 0:
        dark = np.stack([u(Stream.DARK_GATE + g) < d for g in range(gates)], axis=1)
        fired = dark.copy()
        fired[has_signal, signal_gate[has_signal]] = True
        n_clicks = fired.sum(axis=1)
        first_gate = np.where(n_clicks > 0, np.argmax(fired, axis=1), -1)
        gate = np.where(n_clicks == 1, np.where(has_signal, signal_gate, first_gate), first_gate)
    else:
        n_clicks = has_signal.astype(np.int64)
        gate = signal_gate

    flag = np.full(size, -1, dtype=np.int64)
    flag[n_clicks == 1] = np.where(has_signal[n_clicks == 1], Flag.OK, Flag.DARK_SUSPECT)
    flag[n_clicks > 1] = Flag.AMBIGUOUS
    detector = np.where(gate >= 0, gate // width, -1)
    instance = np.where(gate >= 0, gate % width, -1)

    verdict = np.full(size, Verdict.KEY, dtype=np.int64)
    interior = (instance >= 1) & (instance <= n - 1)
    verdict[~interior] = Verdict.DISCARD_EDGE
    verdict[n_clicks > 1] = Verdict.DISCARD_AMBIGUOUS
    verdict[n_clicks == 0] = Verdict.DISCARD_NO_CLICK
    if bb84:
        verdict[a_basis != b_basis] = Verdict.DISCARD_BASIS_MISMATCH
    key = verdict == Verdict.KEY

    alice_bit = np.full(size, -1, dtype=np.int64)
    bob_bit = np.full(size, -1, dtype=np.int64)
    if bb84:
        alice_bit[key] = a_bit[key]
    else:
        rows = np.flatnonzero(key)
        j = instance[rows]
        alice_bit[rows] = bits[rows, j] ^ bits[rows, j - 1]
    bob_bit[key] = (detector[key] == 0).astype(np.int64)

    return BlockResult(verdict, alice_bit, bob_bit, detector, instance, flag, emitted, attacked, arrived)


@dataclass
class Counters:
    verdicts: np.ndarray
    errors: int
    histogram: np.ndarray  # (2, N + 1) single-click counts
    ambiguous: int
    dark_suspect: int
    emitted: int
    attacked: int
    arrived: int

    @classmethod
    def from_block(cls, res: BlockResult, n_slots: int) -> "Counters":
        single = (res.flag == Flag.OK) | (res.flag == Flag.DARK_SUSPECT)
        hist = np.zeros((2, n_slots + 1), dtype=np.int64)
        np.add.at(hist, (res.detector[single], res.instance[single]), 1)
        key = res.verdict == Verdict.KEY
        return cls(
            verdicts=np.bincount(res.verdict, minlength=len(Verdict)).astype(np.int64),
            errors=int(np.count_nonzero(res.alice_bit[key] != res.bob_bit[key])),
            histogram=hist,
            ambiguous=int(np.count_nonzero(res.flag == Flag.AMBIGUOUS)),
            dark_suspect=int(np.count_nonzero(res.flag == Flag.DARK_SUSPECT)),
            emitted=int(res.emitted.sum()),
            attacked=int(res.attacked.sum()),
            arrived=int(res.arrived.sum()),
        )

    def __add__(self, other: "Counters") -> "Counters":
        return Counters(
            self.verdicts + other.verdicts,
            self.errors + other.errors,
            self.histogram + other.histogram,
            self.ambiguous + other.ambiguous,
            self.dark_suspect + other.dark_suspect,
            self.emitted + other.emitted,
            self.attacked + other.attacked,
            self.arrived + other.arrived,
        )


def _block_counters(args: tuple[ExperimentConfig, int, int]) -> Counters:
    config, start, stop = args
    return Counters.from_block(simulate_block(config, start, stop), config.n_slots)


def _binomial_se(p: float, n: int) -> float:
    if n <= 0:
        return math.nan
    return math.sqrt(max(p * (1.0 - p), 0.0) / n)


def _z(estimate: float, oracle: float | None, n: int) -> float | None:
    """z-score using the oracle's binomial spread (empirical spread if that is 0)."""
    if oracle is None or n <= 0:
        return None
    se = _binomial_se(oracle, n) or _binomial_se(estimate, n)
    diff = estimate - oracle
    if se == 0:
        return 0.0 if abs(diff) < 1e-12 else math.copysign(math.inf, diff)
    return diff / se


@dataclass(frozen=True)
class SummaryStats:
    name: str
    protocol: str
    scheme: str
    n_slots: int
    trials: int
    master_seed: int
    attack_fraction: float
    verdict_counts: dict[str, int]
    key_count: int
    error_count: int
    key_efficiency: float
    key_efficiency_stderr: float
    qber: float | None
    qber_stderr: float | None
    instance_histogram: tuple[int, ...]
    detector_histogram: tuple[tuple[int, ...], tuple[int, ...]]
    ambiguous_count: int
    dark_suspect_count: int
    emitted_count: int
    attacked_count: int
    arrived_count: int
    oracle_key_efficiency: float | None
    oracle_qber: float | None
    z_key_efficiency: float | None
    z_qber: float | None

    @property
    def passed(self) -> bool:
        """Every available oracle agrees within the 4-sigma gate."""
        return all(z is None or abs(z) <= Z_GATE for z in (self.z_key_efficiency, self.z_qber))

    def instance_fractions(self) -> np.ndarray:
        h = np.asarray(self.instance_histogram, dtype=float)
        return h / h.sum() if h.sum() else h

    def to_record(self) -> dict:
        """Flat record for CSV / JSON-lines output."""
        rec = {
            "name": self.name,
            "protocol": self.protocol,
            "scheme": self.scheme,
            "n_slots": self.n_slots,
            "trials": self.trials,
            "master_seed": self.master_seed,
            "attack_fraction": self.attack_fraction,
        }
        for verdict in Verdict:
            rec[f"count_{verdict.name.lower()}"] = self.verdict_counts[verdict.name]
        rec.update(
            key_count=self.key_count,
            error_count=self.error_count,
            key_efficiency=self.key_efficiency,
            key_efficiency_stderr=self.key_efficiency_stderr,
            qber=self.qber,
            qber_stderr=self.qber_stderr,
            oracle_key_efficiency=self.oracle_key_efficiency,
            oracle_qber=self.oracle_qber,
            z_key_efficiency=self.z_key_efficiency,
            z_qber=self.z_qber,
            ambiguous_count=self.ambiguous_count,
            dark_suspect_count=self.dark_suspect_count,
            emitted_count=self.emitted_count,
            attacked_count=self.attacked_count,
            arrived_count=self.arrived_count,
            instance_histogram=" ".join(str(c) for c in self.instance_histogram),
            passed=self.passed,
        )
        return rec


def oracle_for(config: ExperimentConfig) -> analytics.RoundExpectation | None:
    return analytics.expected_round_statistics(
        config.protocol,
        config.source,
        config.channel,
        config.detector,
        config.attack_fraction,
        config.eve_analyzer,
    )


def summarize(config: ExperimentConfig, counts: Counters) -> SummaryStats:
    trials = config.trials
    verdicts = {v.name: int(counts.verdicts[v]) for v in Verdict}
    if sum(verdicts.values()) != trials:
        raise RuntimeError("verdict counts do not partition the trials")
    key = verdicts[Verdict.KEY.name]
    eff = key / trials
    qber = counts.errors / key if key else None
    oracle = oracle_for(config)
    o_eff = oracle.key_probability if oracle else None
    o_qber = oracle.qber if oracle else None
    hist = counts.histogram
    return SummaryStats(
        name=config.name,
        protocol=config.protocol.value,
        scheme=config.scheme.value,
        n_slots=config.n_slots,
        trials=trials,
        master_seed=config.master_seed,
        attack_fraction=config.attack_fraction,
        verdict_counts=verdicts,
        key_count=key,
        error_count=counts.errors,
        key_efficiency=eff,
        key_efficiency_stderr=_binomial_se(eff, trials),
        qber=qber,
        qber_stderr=_binomial_se(qber, key) if qber is not None else None,
        instance_histogram=tuple(int(c) for c in hist.sum(axis=0)),
        detector_histogram=(tuple(int(c) for c in hist[0]), tuple(int(c) for c in hist[1])),
        ambiguous_count=counts.ambiguous,
        dark_suspect_count=counts.dark_suspect,
        emitted_count=counts.emitted,
        attacked_count=counts.attacked,
        arrived_count=counts.arrived,
        oracle_key_efficiency=o_eff,
        oracle_qber=o_qber,
        z_key_efficiency=_z(eff, o_eff, trials),
        z_qber=_z(qber, o_qber, key) if qber is not None else None,
    )


def _blocks(trials: int, block_size: int) -> list[tuple[int, int]]:
    return [(s, min(s + block_size, trials)) for s in range(0, trials, block_size)]


def run_experiment(
    config: ExperimentConfig, workers: int = 1, block_size: int = DEFAULT_BLOCK_SIZE
) -> SummaryStats:
    """Run ``config.trials`` rounds and compare the statistics with the oracle."""
    jobs = [(config, s, e) for s, e in _blocks(config.trials, block_size)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_block_counters, jobs))
    else:
        parts = [_block_counters(job) for job in jobs]
    total = parts[0]
    for part in parts[1:]:
        total = total + part
    log.debug("ran %d rounds of %s in %d blocks", config.trials, config.name or config.protocol.value, len(jobs))
    return summarize(config, total)


class SweepRow(NamedTuple):
    n: int
    improved_empirical: float
    improved_oracle: float | None
    conventional_empirical: float
    conventional_oracle: float | None
    stderr_improved: float
    stderr_conventional: float
    improved: SummaryStats
    conventional: SummaryStats


def cell_seed(master_seed: int, n: int, scheme: Scheme) -> int:
    return mix64(master_seed ^ mix64(2 * n + (scheme is Scheme.CONVENTIONAL)))


def sweep_n(
    base: ExperimentConfig,
    n_range: Iterable[int],
    trials: int | None = None,
    workers: int = 1,
) -> list[SweepRow]:
    """Key-creation efficiency against slot count for both DPS encoders."""
    rows = []
    for n in n_range:
        if n < 2:
            raise ConfigurationError(f"sweep needs n >= 2, got {n}")
        stats = {}
        for scheme in Scheme:
            source = replace(base.source, n_slots=n, scheme=scheme.encoder)
            cfg = replace(
                base,
                protocol=Protocol.DPS,
                source=source,
                trials=trials or base.trials,
                master_seed=cell_seed(base.master_seed, n, scheme),
                name=f"sweep_n{n}_{scheme.value.lower()}",
            )
            stats[scheme] = run_experiment(cfg, workers=workers)
        imp, conv = stats[Scheme.IMPROVED], stats[Scheme.CONVENTIONAL]
        rows.append(
            SweepRow(
                n,
                imp.key_efficiency,
                imp.oracle_key_efficiency,
                conv.key_efficiency,
                conv.oracle_key_efficiency,
                imp.key_efficiency_stderr,
                conv.key_efficiency_stderr,
                imp,
                conv,
            )
        )
    return rows
