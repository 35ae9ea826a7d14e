"""Maximum-causal-entropy planning on the product of an MDP and a DFA.

Values satisfy the smoothed Bellman backup: at the sink the value is
``lambda * [dfa state accepting]``, at a decision point it is the log-sum-exp
of the action values, and an action value is the expectation of successor
values under the dynamics.  The DFA advances on the label of each successor
state, so (mdp state, dfa state) summarizes a history exactly and the whole
table is finite.

The backward pass is vectorized: states are grouped into topological levels
of the (acyclic apart from the sink self-loop) transition graph, and each
level is processed with flat numpy gathers and segmented reductions, with
the DFA-state dimension as the trailing axis.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass

import numpy as np

from .mdp import SINK, Mdp, Path, trace_of
from .task import Dfa, TaskSpec, accepts


class PlannerError(ValueError):
    """Planning query on an unsupported model (cycles, bad arguments)."""


# -- compiled MDP structure ---------------------------------------------------

_COMPILED: "weakref.WeakKeyDictionary[Mdp, dict]" = weakref.WeakKeyDictionary()


class _Level:
    __slots__ = (
        "state_idx",
        "row_start",
        "row_end",
        "e_prob",
        "e_succ",
        "e_sym",
        "q_starts",
        "s_starts",
        "row_state",
        "row_local",
    )


class _Compiled:
    """Topologically leveled edge arrays for one (mdp, alphabet) pair."""

    __slots__ = (
        "states",
        "index",
        "n_states",
        "n_rows",
        "sink_idx",
        "start_idx",
        "levels",
        "q_row",
        "n_sym",
    )

    def __init__(self, m: Mdp, alphabet: tuple[str, ...]):
        self.states = m.states
        self.index = {s: i for i, s in enumerate(m.states)}
        self.n_states = len(m.states)
        self.sink_idx = self.index[SINK]
        self.start_idx = self.index[m.start]
        self.n_sym = len(alphabet)
        sym_of = {sym: i for i, sym in enumerate(alphabet)}
        sym_idx = np.full(self.n_states, self.n_sym, dtype=np.int64)
        for s, sym in m.label.items():
            if sym not in sym_of:
                raise PlannerError(f"state label {sym!r} missing from the DFA alphabet")
            sym_idx[self.index[s]] = sym_of[sym]

        level = self._levels(m)
        by_level: dict[int, list] = {}
        for s in m.states:
            if s != SINK:
                by_level.setdefault(level[s], []).append(s)

        self.levels = []
        self.q_row = {}
        row = 0
        for lv in sorted(by_level):
            states = by_level[lv]
            L = _Level()
            L.state_idx = np.array([self.index[s] for s in states], dtype=np.int64)
            L.row_start = row
            e_prob, e_succ, q_starts, s_starts = [], [], [], []
            row_state, row_local = [], []
            n_edges = 0
            for local, s in enumerate(states):
                s_starts.append(len(row_state))
                for a in m.actions_at[s]:
                    self.q_row[(s, a)] = row
                    row_state.append(self.index[s])
                    row_local.append(local)
                    q_starts.append(n_edges)
                    row += 1
                    for succ, p in m.trans[(s, a)].items():
                        e_prob.append(p)
                        e_succ.append(self.index[succ])
                        n_edges += 1
            L.row_end = row
            L.e_prob = np.array(e_prob)
            L.e_succ = np.array(e_succ, dtype=np.int64)
            L.e_sym = sym_idx[L.e_succ]
            L.q_starts = np.array(q_starts, dtype=np.int64)
            L.s_starts = np.array(s_starts, dtype=np.int64)
            L.row_state = np.array(row_state, dtype=np.int64)
            L.row_local = np.array(row_local, dtype=np.int64)
            self.levels.append(L)
        self.n_rows = row

    @staticmethod
    def _levels(m: Mdp) -> dict:
        """Longest distance to the sink per state; raises on cycles."""
        level = {SINK: 0}
        visiting: dict = {}

        def visit(root):
            todo = [(root, False)]
            while todo:
                s, done = todo.pop()
                if done:
                    succs = {t for a in m.actions_at[s] for t in m.trans[(s, a)]}
                    level[s] = 1 + max(level[t] for t in succs)
                    visiting[s] = False
                    continue
                if s in level:
                    continue
                if visiting.get(s):
                    raise PlannerError(
                        "the dynamics contain a cycle; the planner needs a "
                        "finite-horizon (acyclic) model"
                    )
                visiting[s] = True
                todo.append((s, True))
                for a in m.actions_at[s]:
                    for t in m.trans[(s, a)]:
                        if t == s:
                            raise PlannerError(
                                "non-sink self loop; the planner needs an acyclic model"
                            )
                        if t not in level:
                            todo.append((t, False))

        for s in m.states:
            if s not in level:
                visit(s)
        return level


def _compiled_for(m: Mdp, alphabet: tuple[str, ...]) -> _Compiled:
    per_mdp = _COMPILED.setdefault(m, {})
    comp = per_mdp.get(alphabet)
    if comp is None:
        comp = _Compiled(m, alphabet)
        per_mdp[alphabet] = comp
    return comp


def _dfa_next(d: Dfa) -> np.ndarray:
    """(n_sym + 1, n_dfa) gather table; last row is the identity for
    unlabeled successors."""
    n = d.n_states
    table = np.empty((len(d.alphabet) + 1, n), dtype=np.int64)
    for i in range(len(d.alphabet)):
        for q in range(n):
            table[i, q] = d.delta[q][i]
    table[-1] = np.arange(n)
    return table


# -- value tables and policies ------------------------------------------------


class ValueTable:
    """Soft values of every (mdp state, dfa state) product state."""

    def __init__(self, m: Mdp, d: Dfa, lam: float, v, q, comp, dnext):
        self.mdp = m
        self.dfa = d
        self.lam = lam
        self._v = v
        self._q = q
        self._comp = comp
        self._dnext = dnext

    def value(self, state, dfa_state: int) -> float:
        return float(self._v[self._comp.index[state], dfa_state])

    def action_value(self, state, action, dfa_state: int) -> float:
        return float(self._q[self._comp.q_row[(state, action)], dfa_state])

    def action_log_prob(self, state, action, dfa_state: int) -> float:
        return self.action_value(state, action, dfa_state) - self.value(state, dfa_state)

    def action_dist(self, state, dfa_state: int):
        """(actions, probabilities) at a decision point."""
        actions = self.mdp.actions_at[state]
        logits = np.array(
            [self._q[self._comp.q_row[(state, a)], dfa_state] for a in actions]
        )
        probs = np.exp(logits - self._v[self._comp.index[state], dfa_state])
        return actions, probs

    def dfa_after(self, dfa_state: int, mdp_state) -> int:
        sym = self.mdp.label.get(mdp_state)
        if sym is None:
            return dfa_state
        return self.dfa.step(dfa_state, sym)

    def dump(self) -> str:
        """Diagnostic text rendering of the state-value table."""
        lines = [f"lambda={self.lam!r}"]
        for s in self.mdp.states:
            row = " ".join(f"{x:.6f}" for x in self._v[self._comp.index[s]])
            lines.append(f"{s!r}: {row}")
        return "\n".join(lines)


def soft_values(m: Mdp, d: Dfa, lam: float) -> ValueTable:
    """Backward induction of the smoothed Bellman backup at rationality
    ``lam`` (must be nonnegative)."""
    if lam < 0:
        raise PlannerError("rationality must be nonnegative")
    comp = _compiled_for(m, d.alphabet)
    dnext = _dfa_next(d)
    nd = d.n_states
    accepting = np.array([1.0 if d.is_accepting(q) else 0.0 for q in range(nd)])
    v = np.empty((comp.n_states, nd))
    v[comp.sink_idx] = lam * accepting
    q = np.empty((comp.n_rows, nd))
    for L in comp.levels:
        vnext = v[L.e_succ[:, None], dnext[L.e_sym]]
        contrib = L.e_prob[:, None] * vnext
        ql = np.add.reduceat(contrib, L.q_starts, axis=0)
        mx = np.maximum.reduceat(ql, L.s_starts, axis=0)
        ex = np.exp(ql - mx[L.row_local])
        vl = mx + np.log(np.add.reduceat(ex, L.s_starts, axis=0))
        v[L.state_idx] = vl
        q[L.row_start : L.row_end] = ql
    return ValueTable(m, d, lam, v, q, comp, dnext)


@dataclass
class MaxEntPolicy:
    """Softmax-in-value policy together with the competency it realizes."""

    value_table: ValueTable
    competency: float

    def action_dist(self, state, dfa_state: int):
        return self.value_table.action_dist(state, dfa_state)


def satisfaction_prob(pol: MaxEntPolicy, m: Mdp, d: Dfa) -> float:
    """Exact probability that a rollout of the policy ends accepted."""
    vt = pol.value_table
    comp = vt._comp
    nd = d.n_states
    mu = np.zeros((comp.n_states, nd))
    mu[comp.start_idx, 0] = 1.0
    for L in reversed(comp.levels):
        pi_rows = np.exp(vt._q[L.row_start : L.row_end] - vt._v[L.row_state])
        flow_rows = mu[L.row_state] * pi_rows
        n_edges = len(L.e_prob)
        bounds = np.append(L.q_starts, n_edges)
        reps = np.diff(bounds)
        flow_edges = np.repeat(flow_rows, reps, axis=0) * L.e_prob[:, None]
        np.add.at(mu, (L.e_succ[:, None], vt._dnext[L.e_sym]), flow_edges)
    accepting = np.array([1.0 if d.is_accepting(qq) else 0.0 for qq in range(nd)])
    return float(mu[comp.sink_idx] @ accepting)


@dataclass(frozen=True)
class CalibrationResult:
    lam: float
    pr_sat: float
    boundary: bool


def calibrate_rationality(
    m: Mdp,
    d: Dfa,
    p_target: float,
    tol: float = 1e-6,
    lam_max: float = 100.0,
    max_iter: int = 200,
) -> CalibrationResult:
    """Bisection on the rationality so the satisfaction probability hits
    ``p_target``, exploiting its monotonicity in lambda.

    Unreachable targets return the boundary value with ``boundary=True``
    rather than raising: degenerate tasks (accept-all, accept-none) arise
    routinely during search and need finite energies.
    """
    if not 0.0 < p_target < 1.0:
        raise PlannerError("competency target must lie strictly between 0 and 1")

    def sat(lam):
        vt = soft_values(m, d, lam)
        return satisfaction_prob(MaxEntPolicy(vt, p_target), m, d)

    p_lo = sat(0.0)
    if p_lo >= p_target:
        return CalibrationResult(0.0, p_lo, abs(p_lo - p_target) > tol)
    p_hi = sat(lam_max)
    if p_hi <= p_target:
        return CalibrationResult(lam_max, p_hi, abs(p_hi - p_target) > tol)
    lo, hi = 0.0, lam_max
    mid, p_mid = lam_max, p_hi
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        p_mid = sat(mid)
        if abs(p_mid - p_target) <= tol:
            return CalibrationResult(mid, p_mid, False)
        if p_mid < p_target:
            lo = mid
        else:
            hi = mid
    return CalibrationResult(mid, p_mid, abs(p_mid - p_target) > tol)


def demo_surprisal(pol: MaxEntPolicy, m: Mdp, demos) -> float:
    """Negative log likelihood of the demonstrations under the policy.

    Incomplete demonstrations contribute their prefix probability.  A
    zero-probability environment step yields +inf rather than raising.
    """
    vt = pol.value_table
    total = 0.0
    for p in demos:
        dq = 0
        for s, a, succ in p.steps():
            total -= vt.action_log_prob(s, a, dq)
            if succ is None:
                continue
            prob = m.trans[(s, a)].get(succ, 0.0)
            if prob <= 0.0:
                return math.inf
            total -= math.log(prob)
            dq = vt.dfa_after(dq, succ)
    return total


def task_surprisal(
    m: Mdp, t: TaskSpec, demos, p_target: float, ctx: "PlannerContext | None" = None
) -> float:
    """Calibrate, plan, and score the demonstrations for one task."""
    if ctx is not None:
        return ctx.surprisal(t.dfa)
    calib = calibrate_rationality(m, t.dfa, p_target)
    vt = soft_values(m, t.dfa, calib.lam)
    return demo_surprisal(MaxEntPolicy(vt, p_target), m, demos)


def sample_rollout(
    pol: MaxEntPolicy,
    m: Mdp,
    rng,
    prefix: Path | None = None,
    forced_first_move=None,
) -> Path:
    """Continue a prefix to a complete path by alternating policy and
    environment draws.

    ``forced_first_move`` is taken before sampling resumes: an action when
    the prefix ends in a state, a successor state when it ends in an action.
    Forcing a zero-probability move raises.
    """
    vt = pol.value_table
    if prefix is None:
        prefix = Path((m.start,), ())
    states = list(prefix.states)
    actions = list(prefix.actions)
    dq = 0
    for s in states[1:]:
        dq = vt.dfa_after(dq, s)

    def draw_succ(dist, forced=None):
        if forced is not None:
            if dist.get(forced, 0.0) <= 0.0:
                raise PlannerError(f"forced successor {forced!r} has zero probability")
            return forced
        u = rng.random()
        acc = 0.0
        items = list(dist.items())
        for succ, prob in items:
            acc += prob
            if u < acc:
                return succ
        return items[-1][0]

    pending = forced_first_move
    while True:
        if len(actions) == len(states):  # dangling action: environment moves
            s, a = states[-1], actions[-1]
            succ = draw_succ(m.trans[(s, a)], pending)
            pending = None
            states.append(succ)
            dq = vt.dfa_after(dq, succ)
            continue
        s = states[-1]
        if s == SINK:
            return Path(tuple(states), tuple(actions))
        if pending is not None:
            if pending not in m.actions_at[s]:
                raise PlannerError(f"forced action {pending!r} unavailable at {s!r}")
            a = pending
            pending = None
        else:
            acts, probs = vt.action_dist(s, dq)
            u = rng.random()
            acc = 0.0
            a = acts[-1]
            for act, prob in zip(acts, probs):
                acc += prob
                if u < acc:
                    a = act
                    break
        actions.append(a)


class PlannerContext:
    """Per-run planner state: calibration, tables, and surprisals memoized
    by (canonical) task DFA.

    ``competency_mode`` is ``"fixed"`` (use ``competency`` for every task) or
    ``"empirical"`` (per-task fraction of demonstrations the task accepts,
    add-half smoothed; demonstrations must be complete).
    """

    def __init__(
        self,
        m: Mdp,
        demos,
        competency: float = 0.9,
        tol: float = 1e-6,
        lam_max: float = 100.0,
        competency_mode: str = "fixed",
    ):
        if competency_mode not in ("fixed", "empirical"):
            raise PlannerError(f"unknown competency mode {competency_mode!r}")
        if competency_mode == "empirical" and any(not d.complete for d in demos):
            raise PlannerError("empirical competency needs complete demonstrations")
        self.m = m
        self.demos = list(demos)
        self.competency = competency
        self.tol = tol
        self.lam_max = lam_max
        self.competency_mode = competency_mode
        self._tables: dict[Dfa, tuple[ValueTable, CalibrationResult]] = {}
        self._surprisals: dict[Dfa, float] = {}

    def _target_for(self, d: Dfa) -> float:
        if self.competency_mode == "fixed":
            return self.competency
        hits = sum(1 for p in self.demos if accepts(d, trace_of(self.m, p)))
        # Add-half smoothing keeps the target strictly inside (0, 1).
        return (hits + 0.5) / (len(self.demos) + 1.0)

    def table(self, d: Dfa) -> tuple[ValueTable, CalibrationResult]:
        hit = self._tables.get(d)
        if hit is None:
            calib = calibrate_rationality(
                self.m, d, self._target_for(d), tol=self.tol, lam_max=self.lam_max
            )
            vt = soft_values(self.m, d, calib.lam)
            hit = (vt, calib)
            self._tables[d] = hit
        return hit

    def policy(self, d: Dfa) -> MaxEntPolicy:
        vt, calib = self.table(d)
        return MaxEntPolicy(vt, calib.pr_sat)

    def surprisal(self, d: Dfa) -> float:
        val = self._surprisals.get(d)
        if val is None:
            val = demo_surprisal(self.policy(d), self.m, self.demos)
            self._surprisals[d] = val
        return val
