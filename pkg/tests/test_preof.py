import random

import pytest
from hypothesis import given, settings, strategies as st

from preof5g.codec import SEQ_MODULUS, Direction, FlowId, Packet, ProtectionHeader
from preof5g.preof import (
    ConfigurationError,
    FlowEliminationState,
    ReorderBuffer,
    SequenceGenerator,
    Verdict,
    pef_accept,
    pof_close,
    pof_expire,
    pof_submit,
    pref_replicate,
    seq_less,
)

HALF = SEQ_MODULUS // 2
FLOW = FlowId(3, Direction.UPLINK)


def signed_gap(a, b):
    """b - a folded into (-2^27, 2^27] by repeated adjustment."""
    d = b - a
    while d > HALF:
        d -= SEQ_MODULUS
    while d <= -HALF:
        d += SEQ_MODULUS
    return d


def test_seq_less_examples():
    assert seq_less(0, 1)
    assert seq_less(SEQ_MODULUS - 1, 0)
    assert not seq_less(0, HALF + 1)
    assert not seq_less(5, 5)
    # Exactly half the space apart: tie-break says "less" both ways.
    assert seq_less(0, HALF) and seq_less(HALF, 0)


@given(st.integers(0, SEQ_MODULUS - 1), st.integers(0, SEQ_MODULUS - 1))
def test_seq_less_matches_signed_difference(a, b):
    d = signed_gap(a, b)
    if (b - a) % SEQ_MODULUS == HALF:
        assert seq_less(a, b)
    else:
        assert seq_less(a, b) == (d > 0)


def _packet(i=0):
    return Packet(payload_id=i, payload_len=64, flow=FLOW)


def test_replicate_two_paths():
    gen = SequenceGenerator(FLOW, start=7)
    copies = pref_replicate(_packet(), gen, ["a", "b"], pte=9)
    assert [path for path, _ in copies] == ["a", "b"]
    headers = [p.outermost for _, p in copies]
    assert headers[0] == headers[1] == ProtectionHeader(flow_id=3, seq=7, pte_address=9)
    assert [p.copy for _, p in copies] == [0, 1]
    assert gen.next == 8


def test_replicate_single_path_still_stamps():
    gen = SequenceGenerator(FLOW)
    [(path, p)] = pref_replicate(_packet(), gen, ["only"], pte=1)
    assert p.outermost.seq == 0 and gen.next == 1


def test_replicate_sequence_enumeration():
    gen = SequenceGenerator(FLOW)
    seqs = []
    for i in range(3):
        seqs += [p.outermost.seq for _, p in pref_replicate(_packet(i), gen, [0, 1], pte=1)]
    assert seqs == [0, 0, 1, 1, 2, 2]


def test_replicate_errors_and_wrap():
    with pytest.raises(ConfigurationError):
        pref_replicate(_packet(), SequenceGenerator(FLOW), [], pte=1)
    gen = SequenceGenerator(FLOW, start=SEQ_MODULUS - 1)
    pref_replicate(_packet(), gen, [0], pte=1)
    assert gen.next == 0
    with pytest.raises(ConfigurationError):
        SequenceGenerator(FLOW, start=SEQ_MODULUS)


def test_pef_examples():
    s = FlowEliminationState(flow=FLOW)
    assert pef_accept(s, 0) is Verdict.ACCEPT
    assert pef_accept(s, 0) is Verdict.DUPLICATE

    s = FlowEliminationState(flow=FLOW, window=128)
    for q in range(201):
        assert pef_accept(s, q) is Verdict.ACCEPT
    assert s.window_start == 73
    assert pef_accept(s, 10) is Verdict.STALE
    assert pef_accept(s, 73) is Verdict.DUPLICATE
    assert pef_accept(s, 72) is Verdict.STALE
    assert (s.accepted, s.duplicate, s.stale) == (201, 1, 2)

    s = FlowEliminationState(flow=FLOW)
    pef_accept(s, SEQ_MODULUS - 1)
    assert pef_accept(s, 0) is Verdict.ACCEPT
    assert pef_accept(s, SEQ_MODULUS - 1) is Verdict.DUPLICATE


def test_pef_late_copy_inside_window_is_accepted_once():
    s = FlowEliminationState(flow=FLOW, window=8)
    for q in (0, 2, 3):
        pef_accept(s, q)
    assert pef_accept(s, 1) is Verdict.ACCEPT
    assert pef_accept(s, 1) is Verdict.DUPLICATE
    # A jump past the window clears history.
    assert pef_accept(s, 100) is Verdict.ACCEPT
    assert pef_accept(s, 3) is Verdict.STALE
    assert s.bitmap == 1


def brute_force_survivors(n, k, lost):
    return {q for q in range(n) if any((q, c) not in lost for c in range(k))}


def make_trace(rng, n, k, loss, max_skew):
    """Copies (seq, copy) with losses applied, then delivered in an order
    where no copy moves more than ``max_skew`` positions."""
    lost = {(q, c) for q in range(n) for c in range(k) if rng.random() < loss}
    arrivals = [(q + rng.uniform(0, max_skew), q, c) for q in range(n) for c in range(k)]
    arrivals.sort()
    order = [(q, c) for _, q, c in arrivals if (q, c) not in lost]
    return order, lost


def run_pef(order, shift=0, window=128):
    s = FlowEliminationState(flow=FLOW, window=window)
    accepted = []
    for q, _ in order:
        seq = (q + shift) % SEQ_MODULUS
        if pef_accept(s, seq) is Verdict.ACCEPT:
            accepted.append(seq)
    return accepted


@pytest.mark.parametrize("seed", range(40))
def test_exactly_once_against_oracle(seed):
    rng = random.Random(seed)
    n = rng.randint(1, 200)
    k = rng.randint(1, 3)
    loss = rng.choice([0.0, 0.1, 0.5, 0.9])
    order, lost = make_trace(rng, n, k, loss, max_skew=rng.choice([0, 5, 60]))
    expected = brute_force_survivors(n, k, lost)
    accepted = run_pef(order)
    assert len(accepted) == len(set(accepted))
    assert set(accepted) == expected
    # Loss dominance: a sequence disappears only when every copy is gone.
    for q in set(range(n)) - expected:
        assert all((q, c) in lost for c in range(k))
    shift = SEQ_MODULUS - n // 2
    shifted = run_pef(order, shift=shift)
    assert shifted == [(q + shift) % SEQ_MODULUS for q in accepted]


@settings(max_examples=150, deadline=None)
@given(
    n=st.integers(1, 200),
    k=st.integers(1, 3),
    data=st.data(),
)
def test_exactly_once_any_interleaving(n, k, data):
    """Arbitrary interleavings are fine as long as the window spans the trace."""
    copies = [(q, c) for q in range(n) for c in range(k)]
    kept = data.draw(st.lists(st.booleans(), min_size=len(copies), max_size=len(copies)))
    survivors = [x for x, keep in zip(copies, kept) if keep]
    order = data.draw(st.permutations(survivors))
    lost = {x for x, keep in zip(copies, kept) if not keep}
    accepted = run_pef(order, window=256)
    assert sorted(accepted) == sorted(brute_force_survivors(n, k, lost))
    shift = SEQ_MODULUS - n // 2
    assert run_pef(order, shift=shift, window=256) == [(q + shift) % SEQ_MODULUS for q in accepted]


# ordering function


def test_pof_in_order():
    rb = ReorderBuffer(next_expected=5, timeout=100)
    assert pof_submit(rb, 5, "p5", 0) == ["p5"]
    assert rb.next_expected == 6


def test_pof_reverse_arrivals():
    rb = ReorderBuffer(next_expected=5, timeout=100)
    assert pof_submit(rb, 7, "p7", 0) == []
    assert pof_submit(rb, 6, "p6", 1) == []
    assert pof_submit(rb, 5, "p5", 2) == ["p5", "p6", "p7"]
    assert rb.next_expected == 8 and len(rb) == 0
    assert rb.buffered_peak == 2


def test_pof_late_packet():
    rb = ReorderBuffer(next_expected=5)
    assert pof_submit(rb, 4, "p4", 0) == []
    assert rb.late_drop == 1


def test_pof_expire_examples():
    rb = ReorderBuffer(next_expected=5, timeout=10)
    assert pof_expire(rb, 0) == []
    pof_submit(rb, 7, "p7", 0)
    assert pof_expire(rb, 9) == []
    assert pof_expire(rb, 10) == ["p7"]
    assert rb.next_expected == 8 and rb.gap_skipped == 2

    rb = ReorderBuffer(next_expected=5, timeout=10)
    pof_submit(rb, 7, "p7", 0)
    pof_submit(rb, 8, "p8", 3)
    pof_submit(rb, 10, "p10", 6)
    assert pof_expire(rb, 10) == ["p7", "p8"]
    assert rb.next_expected == 9
    assert list(rb.entries) == [10]
    assert pof_expire(rb, 16) == ["p10"]
    assert rb.gap_skipped == 3


def test_pof_overflow_flushes_in_order():
    rb = ReorderBuffer(next_expected=0, capacity=3, timeout=1000)
    for q in (4, 2, 6):
        assert pof_submit(rb, q, q, 0) == []
    assert pof_submit(rb, 3, 3, 0) == [2, 3, 4, 6]
    assert rb.next_expected == 7 and len(rb) == 0
    assert rb.gap_skipped == 3  # 0, 1, 5
    assert rb.overflow_flushes == 1
    assert pof_submit(rb, 5, 5, 1) == []
    assert rb.late_drop == 1


def test_pof_close_accounts_trailing_holes():
    rb = ReorderBuffer(next_expected=0, timeout=10)
    pof_submit(rb, 0, 0, 0)
    pof_submit(rb, 2, 2, 0)
    assert pof_close(rb, 5) == [2]
    assert rb.gap_skipped == 1 + 2
    assert rb.next_expected == 5


def test_pof_wraps():
    top = SEQ_MODULUS - 1
    rb = ReorderBuffer(next_expected=top - 1, timeout=10)
    assert pof_submit(rb, 0, "z", 0) == []
    assert pof_submit(rb, top, "t", 0) == []
    assert pof_submit(rb, top - 1, "s", 0) == ["s", "t", "z"]
    assert rb.next_expected == 1


def test_pof_sync_on_first():
    rb = ReorderBuffer(next_expected=None)
    assert pof_submit(rb, 1000, "x", 0) == ["x"]
    assert rb.next_expected == 1001


@settings(max_examples=200, deadline=None)
@given(
    n=st.integers(1, 60),
    data=st.data(),
    capacity=st.integers(1, 16),
    shift=st.sampled_from([0, SEQ_MODULUS - 30]),
)
def test_pof_output_is_serially_increasing_and_bounded(n, data, capacity, shift):
    order = data.draw(st.permutations(list(range(n))))
    kept = [q for q in order if data.draw(st.booleans())]
    rb = ReorderBuffer(next_expected=shift % SEQ_MODULUS, capacity=capacity, timeout=5)
    out = []
    for now, q in enumerate(kept):
        seq = (q + shift) % SEQ_MODULUS
        out += pof_submit(rb, seq, q, now * 2)
        out += pof_expire(rb, now * 2)
        assert len(rb) <= capacity
    out += pof_close(rb, (n + shift) % SEQ_MODULUS)
    assert all(a < b for a, b in zip(out, out[1:]))
    # Every kept item is either released or counted late, never both or neither.
    assert len(out) + rb.late_drop == len(kept)
    # Every unreleased sequence was skipped exactly once, late arrivals included.
    assert rb.gap_skipped == n - len(out)
