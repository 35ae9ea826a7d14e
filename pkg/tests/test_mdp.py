import math

import pytest

from specsearch.mdp import (
    SINK,
    EnumerationCapError,
    GridSpec,
    Mdp,
    MdpError,
    Path,
    build_gridworld,
    enumerate_complete_paths,
    format_demo,
    parse_demo_line,
    parse_map,
    path_dynamics_prob,
    trace_of,
    validate_path,
)
from specsearch import presets

from helpers import two_arm, TWO_ARM_A_PATH

SLIP = 1.0 / 32.0


def small_grid(slip=SLIP, horizon=3):
    tiles = ("__b_", "____", "_n__", "y___")
    return build_gridworld(GridSpec(4, 4, tiles, slip, (1, 1), horizon))


def test_interior_left_move_slips_down():
    m = small_grid()
    dist = m.transition_dist((1, 1, 0), "left")
    assert dist == {(0, 1, 1): 1.0 - SLIP, (1, 2, 1): SLIP}


def test_no_slip_up_move_is_deterministic():
    m = small_grid(slip=0.0)
    assert m.transition_dist((1, 1, 0), "up") == {(1, 0, 1): 1.0}


def test_down_move_coincides_with_slip():
    m = small_grid()
    assert m.transition_dist((1, 1, 0), "down") == {(1, 2, 1): 1.0}


def test_corner_clamping_cases():
    # Hand-enumerated for the bottom-left corner (0, 3):
    #   down: intended clamps to (0,3), slip clamps to (0,3) -> stay, mass 1
    #   left: intended clamps to (0,3), slip clamps to (0,3) -> stay, mass 1
    #   right: intended (1,3), slip stays (0,3) -> split 31/32, 1/32
    m = small_grid()
    c = (0, 3, 0)
    assert m.transition_dist(c, "down") == {(0, 3, 1): 1.0}
    assert m.transition_dist(c, "left") == {(0, 3, 1): 1.0}
    assert m.transition_dist(c, "right") == {(1, 3, 1): 1.0 - SLIP, (0, 3, 1): SLIP}


def test_horizon_layer_feeds_the_sink():
    m = small_grid(horizon=3)
    for a in m.actions_at[(1, 1, 3)]:
        assert m.transition_dist((1, 1, 3), a) == {SINK: 1.0}
    assert m.transition_dist(SINK, "stay") == {SINK: 1.0}


def test_one_by_one_grid_stays_put_until_horizon():
    m = build_gridworld(GridSpec(1, 1, ("_",), 0.5, (0, 0), 2))
    assert m.transition_dist((0, 0, 0), "up") == {(0, 0, 1): 1.0}
    paths = enumerate_complete_paths(m, 10)
    assert len(paths) == 4**3  # any action sequence of length horizon+1
    traces = {trace_of(m, p) for p in paths}
    assert traces == {("_", "_")}


def test_invalid_grids_rejected():
    with pytest.raises(MdpError):
        build_gridworld(GridSpec(2, 2, ("__",), 0.0, (0, 0), 3))
    with pytest.raises(MdpError):
        build_gridworld(GridSpec(2, 2, ("__", "__"), 0.0, (5, 0), 3))
    with pytest.raises(MdpError):
        build_gridworld(GridSpec(2, 2, ("__", "_q"), 0.0, (0, 0), 3))


def test_transition_probabilities_sum_to_one():
    m = small_grid()
    for (s, a) in m.trans:
        assert abs(sum(m.trans[(s, a)].values()) - 1.0) <= 1e-12


def test_unknown_action_is_a_domain_error():
    m = two_arm()
    with pytest.raises(MdpError):
        m.transition_dist("s0", "zap")


def test_sink_must_be_reachable():
    states = ["s0", "loop", SINK]
    actions_at = {"s0": ("a",), "loop": ("a",), SINK: ("stay",)}
    trans = {
        ("s0", "a"): {"loop": 1.0},
        ("loop", "a"): {"loop": 1.0},
        (SINK, "stay"): {SINK: 1.0},
    }
    with pytest.raises(MdpError):
        Mdp(states, actions_at, "s0", trans, {})


def test_validate_path_accepts_bundled_demos():
    m = presets.bundled_mdp()
    for demo in presets.monolithic_demos() + presets.incremental_demos():
        report = validate_path(m, demo)
        assert report.ok, report


def test_validate_path_flags_zero_probability_step():
    m = two_arm()
    bad = Path(("s0", "g", SINK), ("b", "go"))  # b never reaches g
    report = validate_path(m, bad)
    assert not report.ok and report.index == 0


def test_validate_trivial_and_dangling_paths():
    m = two_arm()
    assert validate_path(m, Path(("s0",), ())).ok
    assert validate_path(m, Path(("s0",), ("a",))).ok  # ends mid-transition
    assert not validate_path(m, Path(("g",), ())).ok


def test_trace_skips_start_and_sink_by_default():
    m = two_arm()
    assert trace_of(m, TWO_ARM_A_PATH) == ("g",)
    assert trace_of(m, Path(("s0",), ())) == ()


def test_trace_start_label_flag():
    m = small_grid()
    p = Path(((1, 1, 0), (1, 2, 1)), ("down",))
    assert trace_of(m, p) == ("_",)
    # start tile of small_grid is blank, so the flag adds a blank symbol
    assert trace_of(m, p, include_start_label=True) == ("_", "_")


def test_two_arm_has_exactly_two_complete_paths():
    m = two_arm()
    assert len(enumerate_complete_paths(m, 5)) == 2


def test_enumeration_cap_refuses():
    m = small_grid(horizon=3)
    with pytest.raises(EnumerationCapError):
        enumerate_complete_paths(m, 10, cap=10)


def test_enumeration_probabilities_sum_to_one_under_dynamics():
    # With a single action per state the dynamics itself is the policy.
    m = small_grid(horizon=2)
    paths = enumerate_complete_paths(m, 10)
    per_action = {}
    for p in paths:
        key = p.actions
        per_action.setdefault(key, 0.0)
        per_action[key] += path_dynamics_prob(m, p)
    for total in per_action.values():
        assert abs(total - 1.0) <= 1e-9


def test_complete_path_flag():
    assert TWO_ARM_A_PATH.complete
    assert not Path(("s0", "g"), ("a",)).complete
    assert not Path(("s0",), ("a",)).complete


def test_map_round_trip_matches_bundled_spec():
    spec = presets.bundled_grid()
    assert spec.width == 8 and spec.height == 8
    assert spec.slip_prob == SLIP
    assert spec.start_cell == (4, 1)
    assert spec.horizon == 15
    assert spec.tiles[2] == "...bb..."
    assert spec.tiles[7] == "yy..r..."


def test_map_parser_rejects_bad_tiles():
    with pytest.raises(MdpError):
        parse_map("slip=0\nstart=0,0\nhorizon=2\nxx\n..")


def test_demo_line_round_trip():
    line = "4,1 L 4,2 D 4,3 D 4,4 R 5,4 D 5,5 D 5,6"
    p = parse_demo_line(line)
    assert p.states[0] == (4, 1, 0) and p.states[-1] == (5, 6, 6)
    assert format_demo(p) == line


def test_demo_line_with_sink():
    p = parse_demo_line("0,0 U $")
    assert p.complete
    assert format_demo(p) == "0,0 U $"
