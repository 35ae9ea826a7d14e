"""Shared fixtures and brute-force oracles for the test suite."""

from __future__ import annotations

import math

import numpy as np

from specsearch.mdp import (
    SINK,
    GridSpec,
    Mdp,
    Path,
    build_gridworld,
    enumerate_complete_paths,
    path_dynamics_prob,
    trace_of,
)
from specsearch.task import Dfa, accepts, minimize

TWO_ARM_ALPHABET = ("g", "r")

# DFA over (g, r) accepting exactly the word <g>.
ACCEPT_G = Dfa(3, TWO_ARM_ALPHABET, ((1, 2), (2, 2), (2, 2)), 0b010)
ACCEPT_ALL_GR = Dfa(1, TWO_ARM_ALPHABET, ((0, 0),), 1)
REJECT_ALL_GR = Dfa(1, TWO_ARM_ALPHABET, ((0, 0),), 0)


def two_arm(slip: float = 0.0) -> Mdp:
    """Start state with two arms: action `a` reaches the accepting-colored
    cell (with optional slip to the other arm), `b` the rejecting one."""
    states = ["s0", "g", "r", SINK]
    actions_at = {"s0": ("a", "b"), "g": ("go",), "r": ("go",), SINK: ("stay",)}
    arm_a = {"g": 1.0 - slip, "r": slip} if slip else {"g": 1.0}
    trans = {
        ("s0", "a"): arm_a,
        ("s0", "b"): {"r": 1.0},
        ("g", "go"): {SINK: 1.0},
        ("r", "go"): {SINK: 1.0},
        (SINK, "stay"): {SINK: 1.0},
    }
    return Mdp(states, actions_at, "s0", trans, {"g": "g", "r": "r"})


TWO_ARM_A_PATH = Path(("s0", "g", SINK), ("a", "go"))
TWO_ARM_B_PATH = Path(("s0", "r", SINK), ("b", "go"))


def random_grid(rng, width=3, height=3, horizon=3, slip=0.0, alphabet=("r", "b")) -> Mdp:
    tiles = tuple(
        "".join(alphabet[rng.integers(0, len(alphabet))] for _ in range(width))
        for _ in range(height)
    )
    start = (int(rng.integers(0, width)), int(rng.integers(0, height)))
    return build_gridworld(GridSpec(width, height, tiles, slip, start, horizon))


def random_dfa(rng, alphabet, max_states=3, minimal=True) -> Dfa:
    n = int(rng.integers(1, max_states + 1))
    delta = tuple(
        tuple(int(rng.integers(0, n)) for _ in alphabet) for _ in range(n)
    )
    mask = int(rng.integers(0, 1 << n))
    d = Dfa(n, tuple(alphabet), delta, mask)
    return minimize(d) if minimal else d


def truncated(path: Path, n_steps: int) -> Path:
    """Incomplete prefix of a complete path."""
    n = max(1, min(n_steps, len(path.actions) - 1))
    return Path(path.states[: n + 1], path.actions[:n])


def brute_force_path_dist(m: Mdp, d: Dfa, lam: float, max_len: int = 32) -> dict:
    """Exhaustive posterior over complete paths: dynamics weight times
    exp(lam * accepted), normalized."""
    weights = {}
    for p in enumerate_complete_paths(m, max_len):
        w = path_dynamics_prob(m, p) * math.exp(
            lam * (1.0 if accepts(d, trace_of(m, p)) else 0.0)
        )
        weights[p] = w
    z = sum(weights.values())
    return {p: w / z for p, w in weights.items()}


def policy_path_prob(pol, m: Mdp, p: Path) -> float:
    """Probability the policy's rollout distribution assigns to a path."""
    vt = pol.value_table
    prob = 1.0
    dq = 0
    for s, a, succ in p.steps():
        prob *= math.exp(vt.action_log_prob(s, a, dq))
        if succ is not None:
            prob *= m.trans[(s, a)].get(succ, 0.0)
            dq = vt.dfa_after(dq, succ)
    return prob


def all_words(alphabet, max_len):
    stack = [()]
    while stack:
        w = stack.pop()
        yield w
        if len(w) < max_len:
            for sym in alphabet:
                stack.append(w + (sym,))


def brute_minimal_consistent_states(examples, alphabet, max_states=3):
    """Smallest n for which ANY n-state total DFA (not just canonical ones)
    is consistent with the examples; None if none within the cap.

    Deliberately independent of the enumeration engine: it sweeps every
    transition table by odometer.
    """
    ex = [(tuple(w), bool(l)) for w, l in examples]
    n_sym = len(alphabet)
    index = {sym: i for i, sym in enumerate(alphabet)}
    coded = [([index[s] for s in w], l) for w, l in ex]
    for n in range(1, max_states + 1):
        n_entries = n * n_sym
        for flat in range(n**n_entries):
            delta = []
            rest = flat
            for _ in range(n_entries):
                delta.append(rest % n)
                rest //= n
            for mask in range(1 << n):
                ok = True
                for word, lab in coded:
                    q = 0
                    for s in word:
                        q = delta[q * n_sym + s]
                    if bool((mask >> q) & 1) != lab:
                        ok = False
                        break
                if ok:
                    return n
    return None
