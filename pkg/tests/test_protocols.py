import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from phaseqkd.devices import DetectionEvent, Flag
from phaseqkd.errors import ConfigurationError, DomainError
from phaseqkd.photonics import Detector, make_rect_state, mz_distribution
from phaseqkd.protocols import (
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
    detector_bit,
    dps_alice_prepare,
    dps_bob_sift,
    eve_intercept_resend,
    resend_from_click,
)
from phaseqkd.rng import RoundRandom, Stream

D1, D2 = Detector.D1, Detector.D2


def ev(detector, instance, flag=Flag.OK):
    return DetectionEvent(detector, instance, flag)


# mappings -----------------------------------------------------------------------

@pytest.mark.parametrize(
    "basis, bit, delta",
    [(Basis.Z, 0, 0.0), (Basis.Z, 1, math.pi), (Basis.X, 0, math.pi / 2), (Basis.X, 1, 3 * math.pi / 2)],
)
def test_bb84_phase_mapping(basis, bit, delta):
    choice = Bb84AliceChoice(basis, bit)
    assert choice.phase_difference == pytest.approx(delta)
    np.testing.assert_allclose(choice.pattern.phases, [0.0, delta])


@pytest.mark.parametrize("basis", list(Basis))
@pytest.mark.parametrize("bit", [0, 1])
def test_bb84_matched_basis_is_deterministic(basis, bit):
    choice = Bb84AliceChoice(basis, bit)
    probs = mz_distribution(make_rect_state(2, choice.pattern), basis.analyzer_phase).probs
    expected = D2 if bit == 0 else D1
    assert probs[int(expected), 1] == pytest.approx(0.5, abs=1e-15)
    assert probs[1 - int(expected), 1] == 0.0


def test_detector_bit_convention():
    assert detector_bit(D2) == 0
    assert detector_bit(D1) == 1


def test_dps_bits_from_phases():
    choice = DpsAliceChoice.from_phases([0.0, math.pi, math.pi])
    assert choice.phase_bits == (0, 1, 1)
    assert choice.key_bits == (1, 0)
    assert choice.bit_at(1) == 1
    with pytest.raises(DomainError):
        DpsAliceChoice.from_phases([0.0, 1.0])
    with pytest.raises(DomainError):
        DpsAliceChoice((0,))


def test_choice_validation():
    with pytest.raises(DomainError):
        Bb84AliceChoice(Basis.Z, 2)
    with pytest.raises(ConfigurationError):
        SiftOutcome(Verdict.KEY, 1, None)
    with pytest.raises(ConfigurationError):
        SiftOutcome(Verdict.DISCARD_EDGE, 0, 0)


def test_random_choices_are_uniform():
    rounds = 100_000
    bases = bits = bob = 0
    dps = np.zeros(4)
    for idx in range(rounds):
        rng = RoundRandom(99, idx)
        c = bb84_alice_prepare(rng)
        bases += c.basis is Basis.X
        bits += c.bit
        bob += bb84_bob_basis(rng) is Basis.X
        dps += dps_alice_prepare(4, rng).phase_bits
    se = math.sqrt(0.25 / rounds)
    for count in (bases, bits, bob, *dps):
        assert abs(count / rounds - 0.5) <= 4 * se


def test_dps_prepare_rejects_single_slot():
    with pytest.raises(DomainError):
        dps_alice_prepare(1, RoundRandom(0, 0))


# sifting ------------------------------------------------------------------------

@pytest.mark.parametrize(
    "event, bob_basis, verdict, bob_bit",
    [
        (ev(D2, 1), Basis.Z, Verdict.KEY, 0),
        (ev(D1, 1), Basis.Z, Verdict.KEY, 1),
        (ev(D2, 0), Basis.Z, Verdict.DISCARD_EDGE, None),
        (ev(D1, 2), Basis.Z, Verdict.DISCARD_EDGE, None),
        (ev(D2, 1), Basis.X, Verdict.DISCARD_BASIS_MISMATCH, None),
        (None, Basis.X, Verdict.DISCARD_BASIS_MISMATCH, None),
        (None, Basis.Z, Verdict.DISCARD_NO_CLICK, None),
        (ev(D1, 1, Flag.AMBIGUOUS), Basis.Z, Verdict.DISCARD_AMBIGUOUS, None),
        (ev(D2, 1, Flag.DARK_SUSPECT), Basis.Z, Verdict.KEY, 0),
    ],
)
def test_bb84_sift_table(event, bob_basis, verdict, bob_bit):
    out = bb84_bob_measure_and_sift(Bb84AliceChoice(Basis.Z, 0), event, bob_basis)
    assert out.verdict is verdict
    assert out.bob_bit == bob_bit
    assert out.alice_bit == (0 if verdict is Verdict.KEY else None)


@pytest.mark.parametrize(
    "event, verdict, bit",
    [
        (ev(D2, 1), Verdict.KEY, 0),
        (ev(D1, 2), Verdict.KEY, 1),
        (ev(D1, 0), Verdict.DISCARD_EDGE, None),
        (ev(D2, 3), Verdict.DISCARD_EDGE, None),
        (None, Verdict.DISCARD_NO_CLICK, None),
        (ev(D2, 2, Flag.AMBIGUOUS), Verdict.DISCARD_AMBIGUOUS, None),
    ],
)
def test_dps_sift_table(event, verdict, bit):
    choice = DpsAliceChoice((0, 0, 1))  # key bits (0, 1)
    out = dps_bob_sift(choice, event)
    assert out.verdict is verdict
    assert out.bob_bit == bit
    assert not out.is_error


@pytest.mark.parametrize("n", range(2, 9))
def test_exhaustive_zero_error_without_eve(n):
    # every pattern, every interior gate: the wrong detector has exactly zero probability
    for bits in itertools.product((0, 1), repeat=n):
        choice = DpsAliceChoice(bits)
        probs = mz_distribution(make_rect_state(n, choice.pattern), 0.0).probs
        for j in range(1, n):
            right = D2 if choice.bit_at(j) == 0 else D1
            assert probs[1 - int(right), j] == 0.0
            assert probs[int(right), j] == pytest.approx(1 / n, abs=1e-15)
            assert not dps_bob_sift(choice, ev(right, j)).is_error


def test_bb84_exhaustive_zero_error_without_eve():
    for basis, bit in itertools.product(Basis, (0, 1)):
        choice = Bb84AliceChoice(basis, bit)
        probs = mz_distribution(make_rect_state(2, choice.pattern), basis.analyzer_phase).probs
        wrong = D1 if bit == 0 else D2
        assert probs[int(wrong), 1] == 0.0


# Eve -------------------------------------------------------------------------------

def test_interior_resend_example():
    state = resend_from_click(3, D2, 1, 0.0, 100.0)
    np.testing.assert_allclose(state.amplitudes, [1 / math.sqrt(2), 1 / math.sqrt(2), 0], atol=1e-15)
    state = resend_from_click(3, D1, 2, 0.0, 100.0)
    np.testing.assert_allclose(state.amplitudes, [0, 1 / math.sqrt(2), -1 / math.sqrt(2)], atol=1e-15)


@pytest.mark.parametrize("instance, slot", [(0, 0), (3, 2)])
def test_edge_resend_is_single_slot(instance, slot):
    state = resend_from_click(3, D1, instance, 0.0, 100.0)
    expected = np.zeros(3)
    expected[slot] = 1.0
    np.testing.assert_array_equal(state.amplitudes, expected)


def test_eve_resend_is_consistent_with_her_click():
    # a resent interior photon reproduces Eve's own outcome at that gate
    choice = DpsAliceChoice((0, 1, 1))
    state = make_rect_state(3, choice.pattern)
    for idx in range(300):
        resent = eve_intercept_resend(state, RoundRandom(21, idx))
        assert abs(resent.norm_squared() - 1) <= 1e-12
        support = np.flatnonzero(np.abs(resent.amplitudes) > 0)
        assert len(support) in (1, 2)
        if len(support) == 2:
            j = support[1]
            probs = mz_distribution(resent, 0.0).probs
            bit = choice.bit_at(j)
            assert probs[0 if bit else 1, j] == pytest.approx(0.5)


@pytest.mark.parametrize("analyzer", list(EveAnalyzer))
def test_bb84_eve_matched_basis_leaves_bit_intact(analyzer):
    # whenever Eve picks Alice's basis and sees an interior click, she resends the right state
    for basis, bit in itertools.product(Basis, (0, 1)):
        choice = Bb84AliceChoice(basis, bit)
        state = make_rect_state(2, choice.pattern)
        for idx in range(200):
            rng = RoundRandom(31, idx)
            eve_basis = Basis.Z if rng.uniform(Stream.EVE_BASIS) < 0.5 else Basis.X
            resent = bb84_eve_intercept_resend(state, rng, analyzer)
            if eve_basis is basis and np.count_nonzero(resent.amplitudes) == 2:
                assert abs(resent.inner(state)) == pytest.approx(1.0, abs=1e-12)


def test_bb84_eve_basis_is_uniform():
    state = make_rect_state(2, [0.0, 0.0])
    rounds = 20_000
    z = sum(RoundRandom(41, i).uniform(Stream.EVE_BASIS) < 0.5 for i in range(rounds))
    assert abs(z / rounds - 0.5) <= 4 * math.sqrt(0.25 / rounds)
    with pytest.raises(ConfigurationError):
        bb84_eve_intercept_resend(make_rect_state(3, [0.0] * 3), RoundRandom(0, 0))
    assert bb84_eve_intercept_resend(state, RoundRandom(0, 0)).n_slots == 2


@given(st.integers(0, 2**63), st.integers(0, 10**9))
def test_projective_eve_resends_a_bb84_state(seed, idx):
    state = make_rect_state(2, [0.0, math.pi / 2])
    resent = bb84_eve_intercept_resend(state, RoundRandom(seed, idx))
    np.testing.assert_allclose(np.abs(resent.amplitudes), [2**-0.5, 2**-0.5], atol=1e-15)


# nonorthogonality ---------------------------------------------------------------------

DPS3_SIGNS = [(1, 1, 1), (1, 1, -1), (1, -1, 1), (1, -1, -1)]


def test_dps3_states_overlap_exactly_one_ninth():
    for s, t in itertools.combinations(DPS3_SIGNS, 2):
        overlap = Fraction(sum(a * b for a, b in zip(s, t)), 3)
        assert overlap**2 == Fraction(1, 9)


def test_dps3_states_overlap_numerically():
    states = [make_rect_state(3, [0.0 if x > 0 else math.pi for x in s]) for s in DPS3_SIGNS]
    for a, b in itertools.combinations(states, 2):
        assert abs(a.inner(b)) ** 2 == pytest.approx(1 / 9, abs=1e-15)
