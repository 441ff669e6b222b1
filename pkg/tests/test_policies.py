import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncsat.channel import constant_trace, trace_from_values
from ncsat.phy import BPSK, MODULATIONS, PSK8, QAM16, QPSK, PhyConfig, bit_error_prob, erasure_prob
from ncsat.policies import (SILENT, ChannelView, Policy, PolicyConfig, PolicyDecision, PolicyState,
                            decide_ancef, decide_ancmef, decide_anc, decide_nc, decide_stancef,
                            effective_window, round_half_up, select_modulation)

CFG = PolicyConfig()
LEVELS = [Fraction(0), Fraction(1, 4), Fraction(1, 2), Fraction(3, 4), Fraction(1)]


# --- direct-summation oracles (exact rational arithmetic) -------------------

def oracle_round(x: Fraction) -> int:
    return math.floor(x + Fraction(1, 2))


def oracle_anc(i, pe, cap=16):
    for n in range(1, cap + 1):
        if sum(1 - p for p in pe[:n]) >= i:
            return n
    return cap


def oracle_ancef(i, pe, silent=False, cap=16):
    if silent:
        return 0
    return min(cap, oracle_round(sum(1 - p for p in pe[:i])))


def oracle_stancef(i, delta, pe, cap=16):
    n = min(cap, oracle_round(sum(1 - p for p in pe[:i + delta])))
    return n, (max(0, i - n) if n else delta)


def _windows():
    for combo in itertools.product(LEVELS, repeat=4):
        yield combo, list(combo) * 4  # 16 slots, the 4-slot pattern repeated


def test_policies_match_oracle_on_level_grid():
    checked = 0
    for combo, pe in _windows():
        w = np.array([float(p) for p in pe])
        for i in range(1, 5):
            assert decide_nc(i).batch_size == i
            assert decide_anc(i, w, CFG).batch_size == oracle_anc(i, pe)
            assert decide_ancef(i, w, 1e-6, CFG).batch_size == oracle_ancef(i, pe)
            assert decide_ancef(i, w, 1e-3, CFG) == SILENT
            for delta in range(4):
                dec, st_ = decide_stancef(i, w, 1e-6, PolicyState(delta), CFG)
                n, carry = oracle_stancef(i, delta, pe)
                assert dec.batch_size == n
                assert st_.delta == carry
            checked += 1
    assert checked == 625 * 4


def test_anc_cap_and_examples():
    assert decide_anc(4, np.zeros(16)).batch_size == 4
    assert decide_anc(4, np.full(16, 0.5)).batch_size == 8
    assert decide_anc(1, np.ones(16)).batch_size == 16
    assert decide_anc(4, np.full(16, 0.9)).batch_size == 16


def test_ancef_examples():
    assert decide_ancef(4, np.zeros(4), 0.0).batch_size == 4
    # 4 * 0.625 = 2.5 rounds half up
    assert decide_ancef(4, np.full(4, 0.375), 0.0).batch_size == 3
    assert decide_ancef(4, np.full(4, 0.01), 1e-5).batch_size == 4
    assert decide_ancef(4, np.full(4, 0.01), 1.0001e-5).silent


def test_round_half_up():
    assert [round_half_up(x) for x in (0.49, 0.5, 1.5, 2.5, 2.4999999)] == [0, 1, 2, 3, 2]


def test_stancef_carry_sequence():
    pe = np.full(16, 0.5)
    dec, s = decide_stancef(4, pe, 0.0, PolicyState())
    assert dec.batch_size == 2 and s.delta == 2
    dec, s = decide_stancef(4, pe, 0.0, s)
    assert dec.batch_size == 3 and s.delta == 1
    dec, s2 = decide_stancef(4, pe, 1.0, s)
    assert dec.silent and s2 == s


def test_select_modulation():
    pb = {BPSK: 1e-9, QPSK: 1e-7, PSK8: 2e-5, QAM16: 1e-3}
    assert select_modulation(pb, 1e-5) is QPSK
    assert select_modulation({m: 1.0 for m in MODULATIONS}, 1e-5) is None


def oracle_ancmef(i, esn0_now, window, phy=PhyConfig()):
    best = None
    for m in MODULATIONS:
        if bit_error_prob(esn0_now, m) <= 1e-5:
            best = m
    if best is None:
        return 0, None
    span = i * best.bits_per_symbol
    total = math.fsum(1 - erasure_prob(bit_error_prob(x, best), phy.packet_bits) for x in window[:span])
    n = min(16, math.floor(total + 0.5))
    return (n, best) if n else (0, None)


@pytest.mark.parametrize("esn0", [0.0, 9.0, 10.0, 13.0, 15.0, 18.0, 19.0, 20.0, 30.0])
def test_ancmef_matches_oracle(esn0):
    rng = np.random.default_rng(int(esn0 * 10))
    window = esn0 + rng.normal(0, 2.0, 16)
    for i in range(1, 5):
        n, mod = oracle_ancmef(i, esn0, window)
        dec = decide_ancmef(i, esn0, window)
        assert dec.batch_size == n
        if n:
            assert dec.modulation is mod


def test_ancmef_choice_at_high_snr():
    dec = decide_ancmef(4, 25.0, np.full(16, 25.0))
    assert dec == PolicyDecision(16, QAM16)
    dec = decide_ancmef(4, 14.0, np.full(16, 14.0))
    assert dec == PolicyDecision(8, QPSK)
    assert decide_ancmef(4, 5.0, np.full(16, 5.0)).silent


def test_window_too_short():
    with pytest.raises(ValueError):
        decide_anc(2, np.zeros(3))
    with pytest.raises(ValueError):
        decide_ancef(4, np.zeros(3), 0.0)
    with pytest.raises(ValueError):
        decide_nc(0)


# --- properties --------------------------------------------------------------

probs = st.floats(0.0, 1.0, allow_nan=False)
windows = st.lists(probs, min_size=16, max_size=16)


@settings(max_examples=300, deadline=None)
@given(i=st.integers(1, 4), w=windows)
def test_batch_size_bounds(i, w):
    w = np.array(w)
    anc = decide_anc(i, w).batch_size
    assert i <= anc <= 16
    assert 0 <= decide_ancef(i, w, 0.0).batch_size <= i
    # ANC is the smallest covering batch, or the cap when nothing covers
    covered = np.cumsum(1 - w) >= i - 1e-9
    assert anc == (int(np.argmax(covered)) + 1 if covered.any() else 16)


@settings(max_examples=300, deadline=None)
@given(i=st.integers(1, 4), w=windows, k=st.integers(0, 15), factor=st.floats(0.0, 1.0))
def test_better_channel_never_costs_more_packets(i, w, k, factor):
    w = np.array(w)
    better = w.copy()
    better[k] *= factor
    assert decide_anc(i, better).batch_size <= decide_anc(i, w).batch_size
    assert decide_ancef(i, better, 0.0).batch_size >= decide_ancef(i, w, 0.0).batch_size


@settings(max_examples=200, deadline=None)
@given(i=st.integers(1, 4), delta=st.integers(0, 3), w=windows)
def test_stancef_carry_bounds(i, delta, w):
    dec, s = decide_stancef(i, np.array(w), 0.0, PolicyState(delta))
    assert 0 <= dec.batch_size <= i + delta
    if dec.silent:
        assert s.delta == delta
    else:
        assert s.delta == max(0, i - dec.batch_size)


# --- Policy / ChannelView integration -----------------------------------------

def _random_trace(seed, n=60):
    rng = np.random.default_rng(seed)
    return trace_from_values(rng.uniform(5.0, 22.0, n))


@pytest.mark.parametrize("seed", range(5))
def test_policy_decide_matches_functions(seed):
    trace = _random_trace(seed)
    phy = PhyConfig()
    view = ChannelView(trace, phy)
    for j in range(0, 40):
        for i in range(1, 5):
            w = view.pe[BPSK][j:j + 16]
            pb = float(view.pb[BPSK][j])
            assert Policy("nc").decide(i, j, view)[0] == decide_nc(i)
            assert Policy("anc").decide(i, j, view)[0] == decide_anc(i, w)
            assert Policy("ancef").decide(i, j, view)[0] == decide_ancef(i, w, pb)
            for delta in range(3):
                got, s = Policy("stancef").decide(i, j, view, PolicyState(delta, 2))
                want, s2 = decide_stancef(i, w, pb, PolicyState(delta, 2))
                assert got == want
                assert s.delta == s2.delta
                assert s.trial_count == (3 if not got.silent else 2)
            got, _ = Policy("ancmef").decide(i, j, view)
            assert got == decide_ancmef(i, float(trace.esn0_db[j]), trace.esn0_db[j:j + 16], phy)


def test_hold_mode_repeats_current_slot():
    trace = trace_from_values([10.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0] * 3)
    view = ChannelView(trace, PhyConfig())
    w = effective_window(trace, 0, 4, "hold")
    assert np.all(w == view.pe[BPSK][0])
    genie, _ = Policy("ancef").decide(4, 0, view)
    hold, _ = Policy("ancef", PolicyConfig(csi_mode="hold")).decide(4, 0, view)
    assert genie.batch_size == 1
    assert hold.batch_size == 4


def test_resume_slot_skips_only_silent_slots():
    rng = np.random.default_rng(2)
    trace = trace_from_values(np.where(rng.random(200) < 0.7, 2.0, 14.0))
    view = ChannelView(trace, PhyConfig())
    for name in ("ancef", "stancef", "ancmef"):
        pol = Policy(name)
        for j in range(150):
            r = pol.resume_slot(j, view)
            assert r > j
            for k in range(j + 1, min(r, 180)):
                assert pol.decide(4, k, view)[0].silent


def test_view_window_bounds():
    view = ChannelView(constant_trace(10.0, 8), PhyConfig())
    with pytest.raises(IndexError):
        view.window(5, 4)
    with pytest.raises(IndexError):
        view.window(8, 1)
    assert view.next_qos_slot(0, 1e-5) == 0
    assert ChannelView(constant_trace(0.0, 8), PhyConfig()).next_qos_slot(0, 1e-5) == 8


def test_config_validation():
    with pytest.raises(ValueError):
        Policy("bogus")
    with pytest.raises(ValueError):
        PolicyConfig(batch_cap=0)
    with pytest.raises(ValueError):
        PolicyConfig(csi_mode="oracle")
    assert Policy("anc").lookahead(4) == 16
