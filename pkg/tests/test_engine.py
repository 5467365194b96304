import math
from dataclasses import replace

import numpy as np
import pytest

from phaseqkd.analytics import Protocol
from phaseqkd.devices import ChannelConfig, DetectorConfig
from phaseqkd.engine import (
    ExperimentConfig,
    Scheme,
    cell_seed,
    run_experiment,
    run_round,
    simulate_block,
    sweep_n,
)
from phaseqkd.errors import ConfigurationError
from phaseqkd.protocols import EveAnalyzer, Verdict


def dps3(scheme=Scheme.IMPROVED, **kw):
    kw.setdefault("trials", 20_000)
    return ExperimentConfig.create(Protocol.DPS, scheme, 3, **kw)


CROSS_CHECK = [
    dps3(master_seed=1),
    dps3(Scheme.CONVENTIONAL, master_seed=2, attack_fraction=0.5),
    ExperimentConfig.create(Protocol.BB84, Scheme.IMPROVED, master_seed=3, attack_fraction=1.0),
    ExperimentConfig.create(
        Protocol.BB84, Scheme.CONVENTIONAL, master_seed=4, attack_fraction=0.7,
        eve_analyzer=EveAnalyzer.INTERFEROMETER,
    ),
    ExperimentConfig.create(
        Protocol.DPS, Scheme.IMPROVED, 4, master_seed=5, attack_fraction=0.3,
        channel=ChannelConfig(10.0, 0.2, 0.4),
        detector=DetectorConfig(0.8, 0.01, 20.0),
    ),
]


@pytest.mark.parametrize("config", CROSS_CHECK, ids=lambda c: f"{c.protocol.value}-{c.scheme.value}-{c.attack_fraction}")
def test_vectorized_block_matches_scalar_rounds(config):
    start, stop = 1000, 4000
    block = simulate_block(config, start, stop)
    for i, idx in enumerate(range(start, stop)):
        rec = run_round(config, idx)
        assert block.verdict[i] == rec.outcome.verdict
        assert block.emitted[i] == rec.emitted
        assert block.attacked[i] == rec.attacked
        assert block.arrived[i] == rec.arrived
        if rec.event is None:
            assert block.detector[i] == -1
        else:
            assert (block.detector[i], block.instance[i], block.flag[i]) == (
                rec.event.detector, rec.event.instance, rec.event.flag,
            )
        if rec.outcome.verdict is Verdict.KEY:
            assert (block.alice_bit[i], block.bob_bit[i]) == (rec.outcome.alice_bit, rec.outcome.bob_bit)


def test_run_round_is_deterministic():
    cfg = dps3(master_seed=9, attack_fraction=1.0)
    assert run_round(cfg, 77) == run_round(cfg, 77)


def test_round_messages_follow_protocol_order():
    rec = run_round(ExperimentConfig.create(Protocol.BB84, master_seed=2), 0)
    kinds = [(m.sender, m.kind) for m in rec.messages]
    assert kinds[0] == ("alice", "trigger")
    assert kinds[-1] == ("alice", "verdict")
    assert ("bob", "basis") in kinds


def test_reruns_are_bit_identical():
    cfg = dps3(master_seed=123, attack_fraction=0.4)
    assert run_experiment(cfg) == run_experiment(cfg)


def test_worker_and_block_independence():
    cfg = dps3(trials=50_000, master_seed=11, detector=DetectorConfig(0.9, 0.001, 5.0))
    base = run_experiment(cfg, workers=1)
    assert run_experiment(cfg, workers=8, block_size=4096) == base
    assert run_experiment(cfg, workers=1, block_size=777) == base


def test_verdict_counts_partition_trials():
    cfg = dps3(master_seed=3, attack_fraction=0.5, channel=ChannelConfig(30.0, 0.2))
    s = run_experiment(cfg)
    assert sum(s.verdict_counts.values()) == cfg.trials
    assert s.key_count == s.verdict_counts["KEY"]
    assert s.error_count <= s.key_count
    assert sum(s.instance_histogram) == s.key_count + s.verdict_counts["DISCARD_EDGE"]


@pytest.mark.parametrize(
    "scheme, expected", [(Scheme.IMPROVED, 2 / 3), (Scheme.CONVENTIONAL, 2 / 9)]
)
def test_dps3_key_fraction(scheme, expected):
    s = run_experiment(dps3(scheme, trials=200_000, master_seed=17))
    assert s.key_efficiency == pytest.approx(expected, abs=0.004)
    assert s.error_count == 0
    assert s.passed


def test_bb84_conventional_key_fraction():
    s = run_experiment(ExperimentConfig.create(Protocol.BB84, Scheme.CONVENTIONAL, trials=200_000, master_seed=18))
    assert s.key_efficiency == pytest.approx(0.125, abs=0.003)
    assert s.passed


def test_full_attack_qber():
    s = run_experiment(dps3(trials=200_000, master_seed=19, attack_fraction=1.0))
    assert s.qber == pytest.approx(0.25, abs=0.005)
    assert s.oracle_qber == pytest.approx(0.25, abs=1e-12)
    assert s.attacked_count == s.emitted_count == s.trials
    assert s.passed


def test_histograms_have_expected_shape():
    s = run_experiment(dps3(trials=10_000, master_seed=4))
    assert len(s.instance_histogram) == 4
    assert len(s.detector_histogram) == 2 and len(s.detector_histogram[0]) == 4
    assert np.isclose(s.instance_fractions().sum(), 1.0)


def test_dark_counts_are_tracked():
    cfg = dps3(master_seed=6, detector=DetectorConfig(dark_count_prob_per_gate=0.02), channel=ChannelConfig(50.0, 0.2))
    s = run_experiment(cfg)
    assert s.ambiguous_count == s.verdict_counts["DISCARD_AMBIGUOUS"] > 0
    assert s.dark_suspect_count > 0
    assert s.error_count > 0
    assert s.passed


def test_small_runs_pass_the_oracle_gate():
    s = run_experiment(dps3(trials=10, master_seed=1))
    assert s.trials == 10
    assert s.passed


def test_record_is_flat():
    rec = run_experiment(dps3(trials=1000, master_seed=1, name="x")).to_record()
    assert rec["name"] == "x"
    assert all(not isinstance(v, (dict, list, tuple)) for v in rec.values())
    assert rec["count_key"] == rec["key_count"]


def test_config_validation():
    with pytest.raises(ConfigurationError):
        dps3(trials=0)
    with pytest.raises(ConfigurationError):
        ExperimentConfig.create(Protocol.BB84, n_slots=3)
    with pytest.raises(ConfigurationError):
        dps3(attack_fraction=1.2)
    with pytest.raises(ConfigurationError):
        dps3(master_seed=-1)
    with pytest.raises(ConfigurationError):
        ExperimentConfig.create(Protocol.DPS, n_slots=1)


# sweep --------------------------------------------------------------------------------

def test_sweep_rows_and_monotonicity():
    rows = sweep_n(dps3(master_seed=50), range(2, 7), trials=50_000)
    assert [r.n for r in rows] == [2, 3, 4, 5, 6]
    for r in rows:
        assert r.improved_oracle == pytest.approx((r.n - 1) / r.n)
        assert r.conventional_oracle == pytest.approx((r.n - 1) / r.n**2)
        assert abs(r.improved_empirical - r.improved_oracle) <= 4 * r.stderr_improved
        assert abs(r.conventional_empirical - r.conventional_oracle) <= 4 * r.stderr_conventional
    imp = [r.improved_oracle for r in rows]
    conv = [r.conventional_oracle for r in rows[1:]]
    assert imp == sorted(imp)
    assert conv == sorted(conv, reverse=True)


def test_sweep_cells_use_distinct_seeds():
    seeds = {cell_seed(0, n, s) for n in range(2, 21) for s in Scheme}
    assert len(seeds) == 38
    with pytest.raises(ConfigurationError):
        sweep_n(dps3(), [1])


# oracle agreement grid ---------------------------------------------------------------

GRID = [
    dict(),
    dict(channel=ChannelConfig(25.0, 0.2)),
    dict(detector=DetectorConfig(efficiency=0.3)),
    dict(detector=DetectorConfig(jitter_sigma=4.0)),
    dict(detector=DetectorConfig(dark_count_prob_per_gate=0.005), channel=ChannelConfig(40.0, 0.25)),
    dict(attack_fraction=0.35),
    dict(attack_fraction=1.0, detector=DetectorConfig(0.7, 0.002, 3.0)),
]


@pytest.mark.parametrize("kw", GRID)
@pytest.mark.parametrize("protocol, n", [(Protocol.BB84, 2), (Protocol.DPS, 3), (Protocol.DPS, 5)])
def test_oracle_agreement_grid(kw, protocol, n):
    cfg = ExperimentConfig.create(protocol, Scheme.CONVENTIONAL, n, trials=60_000, master_seed=n * 1000 + len(kw), **kw)
    s = run_experiment(cfg)
    assert s.oracle_key_efficiency is not None
    assert s.passed, (s.z_key_efficiency, s.z_qber)


def test_bb84_interferometer_eve():
    cfg = ExperimentConfig.create(
        Protocol.BB84, Scheme.IMPROVED, trials=100_000, master_seed=8, attack_fraction=1.0,
        eve_analyzer=EveAnalyzer.INTERFEROMETER,
    )
    s = run_experiment(cfg)
    assert s.oracle_qber == pytest.approx(0.375)
    assert abs(s.qber - 0.375) <= 4 * s.qber_stderr


def test_drift_does_not_raise_qber():
    s = run_experiment(dps3(master_seed=2, channel=ChannelConfig(common_phase_drift=1.234)))
    assert s.error_count == 0
    assert math.isclose(s.oracle_qber, 0.0)


def test_replace_keeps_validation():
    with pytest.raises(ConfigurationError):
        replace(dps3(), trials=-5)
