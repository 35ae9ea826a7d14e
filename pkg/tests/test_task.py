import math

import numpy as np
import pytest

from specsearch import presets
from specsearch.mdp import Path, SINK, trace_of
from specsearch.task import (
    BOTTOM,
    Dfa,
    Incremental,
    LabeledExample,
    MONOLITHIC,
    TaskError,
    TaskSpec,
    accepts,
    consistent,
    dfa_from_text,
    dfa_size_bits,
    dfa_size_nats,
    dfa_to_dot,
    dfa_to_text,
    is_bottom,
    language_subset,
    minimize,
    path_in_task,
    same_language,
    subset_counterexample,
)

from helpers import ACCEPT_G, all_words, random_dfa, two_arm, TWO_ARM_A_PATH, TWO_ARM_B_PATH

GRID_SIGMA = ("r", "b", "y", "n", "_")


def test_accepts_on_one_state_dfas():
    accept_all = Dfa(1, ("a", "b"), ((0, 0),), 1)
    assert accepts(accept_all, ())
    assert accepts(accept_all, ("a", "b", "b"))
    reject_all = Dfa(1, ("a", "b"), ((0, 0),), 0)
    assert not accepts(reject_all, ("a",))


def test_accepts_foreign_symbol_raises():
    d = Dfa(1, ("a",), ((0,),), 1)
    with pytest.raises(TaskError):
        accepts(d, ("z",))


def test_parity_dfa_hand_run():
    # Two states over {0, 1}: state flips on 1, accepting iff odd many 1s.
    parity = Dfa(2, ("0", "1"), ((0, 1), (1, 0)), 0b10)
    # 011: q0 -0-> q0 -1-> q1 -1-> q0, so rejected; hand table check
    assert not accepts(parity, ("0", "1", "1"))
    assert accepts(parity, ("0", "1"))
    assert accepts(parity, ("1", "1", "1"))


def test_ground_truth_fixture_classifies_diagnostics():
    m = presets.bundled_mdp()
    gt = presets.ground_truth_dfa()
    diag = presets.diagnostic_paths()
    assert accepts(gt, trace_of(m, diag["repays_debt"]))
    assert not accepts(gt, trace_of(m, diag["skips_brown"]))
    assert not accepts(gt, trace_of(m, diag["crosses_red"]))


def test_minimize_is_idempotent_and_canonical():
    gt = presets.ground_truth_dfa()
    assert minimize(gt) == gt
    assert minimize(minimize(gt)) == minimize(gt)


def test_minimize_merges_duplicate_sinks():
    # Two copies of an accepting sink state.
    d = Dfa(3, ("a",), ((1,), (1,), (2,)), 0b110)
    md = minimize(d)
    assert md.n_states == 2
    assert same_language(d, md)


def test_minimize_preserves_language_exhaustively():
    rng = np.random.default_rng(3)
    for _ in range(30):
        d = random_dfa(rng, ("0", "1"), max_states=6, minimal=False)
        md = minimize(d)
        assert md.n_states <= d.n_states
        for w in all_words(("0", "1"), 8):
            assert accepts(d, w) == accepts(md, w)


def test_size_of_single_state_dfa():
    # bits = ceil(log2 2) + 1 + 0 + 0 = 2
    d = Dfa(1, GRID_SIGMA, ((0, 0, 0, 0, 0),), 1)
    assert dfa_size_bits(d) == 2
    assert dfa_size_nats(d) == pytest.approx(2 * math.log(2), abs=1e-12)


def test_size_of_ground_truth_golden_value():
    # 7 non-self edges, 4 states: 3 + 4 + 2 + 7*(2+2+3) = 58 bits.
    gt = presets.ground_truth_dfa()
    assert dfa_size_bits(gt) == 58
    assert dfa_size_nats(gt) == pytest.approx(58 * math.log(2), rel=1e-12)


def test_size_invariant_under_renumbering():
    rng = np.random.default_rng(11)
    for _ in range(20):
        d = random_dfa(rng, ("0", "1"), max_states=4, minimal=True)
        perm = list(rng.permutation(d.n_states))
        if perm[0] != 0:
            # keep the start at 0 so the permuted automaton is well formed
            i = perm.index(0)
            perm[0], perm[i] = perm[i], perm[0]
        inv = [0] * d.n_states
        for new, old in enumerate(perm):
            inv[old] = new
        delta = [[0] * 2 for _ in range(d.n_states)]
        mask = 0
        for q in range(d.n_states):
            for i in range(2):
                delta[inv[q]][i] = inv[d.delta[q][i]]
            if d.is_accepting(q):
                mask |= 1 << inv[q]
        scrambled = Dfa(d.n_states, d.alphabet, tuple(tuple(r) for r in delta), mask)
        assert dfa_size_nats(minimize(scrambled)) == pytest.approx(
            dfa_size_nats(d), rel=1e-12
        )


def test_incremental_size_of_reference_is_zero():
    ref = presets.reference_dfa()
    spec = TaskSpec(ref, Incremental(ref, presets.MANDATORY_POSITIVES))
    assert spec.size_nats == pytest.approx(0.0, abs=1e-12)


def test_language_subset_basics():
    gt = presets.ground_truth_dfa()
    ref = presets.reference_dfa()
    assert language_subset(gt, gt)
    assert language_subset(gt, ref)
    assert not language_subset(ref, gt)
    empty = Dfa(1, GRID_SIGMA, ((0,) * 5,), 0)
    assert language_subset(empty, gt)


def test_language_subset_against_exhaustive_oracle():
    rng = np.random.default_rng(5)
    for _ in range(40):
        a = random_dfa(rng, ("0", "1"), max_states=3)
        b = random_dfa(rng, ("0", "1"), max_states=3)
        oracle = all(
            (not accepts(a, w)) or accepts(b, w) for w in all_words(("0", "1"), 7)
        )
        assert language_subset(a, b) == oracle


def test_subset_counterexample_is_a_witness():
    rng = np.random.default_rng(9)
    found = 0
    for _ in range(60):
        a = random_dfa(rng, ("0", "1"), max_states=3)
        b = random_dfa(rng, ("0", "1"), max_states=3)
        w = subset_counterexample(a, b)
        if w is not None:
            found += 1
            assert accepts(a, w) and not accepts(b, w)
    assert found > 0


def test_strict_subset_has_witness():
    # Prop support: minimal a strictly inside b gives a word in b but not a.
    gt = presets.ground_truth_dfa()
    ref = presets.reference_dfa()
    w = subset_counterexample(ref, gt)
    assert w is not None and accepts(ref, w) and not accepts(gt, w)


def test_task_spec_canonicalizes():
    # A bloated DFA with an unreachable state minimizes inside TaskSpec.
    d = Dfa(2, ("a",), ((0,), (1,)), 0b01)
    spec = TaskSpec(d, MONOLITHIC)
    assert spec.dfa.n_states == 1
    assert spec.size_nats == pytest.approx(2 * math.log(2))


def test_task_spec_equality_is_by_language():
    d1 = Dfa(2, ("a",), ((0,), (1,)), 0b01)
    d2 = Dfa(1, ("a",), ((0,),), 1)
    assert TaskSpec(d1, MONOLITHIC) == TaskSpec(d2, MONOLITHIC)
    assert hash(TaskSpec(d1, MONOLITHIC)) == hash(TaskSpec(d2, MONOLITHIC))


def test_incremental_constraints_enforced():
    ref = presets.reference_dfa()
    rc = Incremental(ref, presets.MANDATORY_POSITIVES)
    accept_all = Dfa(1, GRID_SIGMA, ((0,) * 5,), 1)
    with pytest.raises(TaskError):  # accept-all is not inside the reference
        TaskSpec(accept_all, rc)
    reject_all = Dfa(1, GRID_SIGMA, ((0,) * 5,), 0)
    with pytest.raises(TaskError):  # rejects the mandatory positives
        TaskSpec(reject_all, rc)
    TaskSpec(presets.ground_truth_dfa(), rc)  # the target itself is a member


def test_path_membership_via_traces():
    m = two_arm()
    t = TaskSpec(ACCEPT_G, MONOLITHIC)
    assert path_in_task(t, TWO_ARM_A_PATH, m)
    assert not path_in_task(t, TWO_ARM_B_PATH, m)
    with pytest.raises(TaskError):
        path_in_task(t, Path(("s0", "g"), ("a",)), m)


def test_consistency_checks():
    t = TaskSpec(ACCEPT_G, MONOLITHIC)
    assert consistent(t, frozenset())
    good = {LabeledExample(("g",), True), LabeledExample(("r",), False)}
    assert consistent(t, good)
    assert not consistent(t, {LabeledExample(("g",), False)})


def test_bottom_is_a_singleton_sentinel():
    from specsearch.task import Bottom

    assert Bottom() is BOTTOM
    assert is_bottom(BOTTOM)
    assert not is_bottom(TaskSpec(ACCEPT_G, MONOLITHIC))


def test_dfa_text_round_trip():
    gt = presets.ground_truth_dfa()
    assert dfa_from_text(dfa_to_text(gt)) == gt
    ref = presets.reference_dfa()
    assert dfa_from_text(dfa_to_text(ref)) == ref


def test_dfa_text_format_shape():
    d = Dfa(2, GRID_SIGMA, ((0, 0, 1, 0, 0), (1, 1, 1, 1, 1)), 0b10)
    text = dfa_to_text(d)
    assert text == "n=2; sigma=r,b,y,n,_; accept=2; edges=0,y->1"


def test_dot_export_conventions():
    d = Dfa(1, GRID_SIGMA, ((0,) * 5,), 1)
    dot = dfa_to_dot(d)
    assert "doublecircle" in dot
    assert "->" in dot  # init arrow
    assert "q0 -> q0" not in dot  # self loops omitted
    gt_dot = dfa_to_dot(presets.ground_truth_dfa())
    assert gt_dot.count("doublecircle") == 1
    assert gt_dot.count("[shape=circle") == 3
