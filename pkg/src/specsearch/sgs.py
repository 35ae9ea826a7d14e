"""Surprisal-guided sampling of conjectured mislabeled paths.

Given a candidate task, pick a pivot node with probability increasing in
the magnitude of the surprisal gradient there, then roll the task's policy
out through one of the pivot's off-tree moves until the episode ends.  The
rollout is kept only if its membership in the candidate matches the sign of
the gradient, and the example it yields carries the *negated* membership:
the sampler's whole point is to conjecture that the candidate mislabels
this path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mdp import SINK, Mdp, Path, trace_of
from .planner import MaxEntPolicy, PlannerContext, sample_rollout
from .prefix_tree import EGO, PrefixTree, pivot_values_of_task, surprisal_gradient
from .task import Incremental, LabeledExample, TaskSpec, accepts, path_in_task


class SgsError(ValueError):
    pass


@dataclass(frozen=True)
class SgsDraw:
    """A successful proposal: where the sampled path pivots, the conjectured
    example, and the surprisal gradient at the pivot."""

    pivot: int
    example: LabeledExample
    gradient: float


@dataclass(frozen=True)
class SgsConfig:
    """Pivot temperature and retry budget.

    ``beta`` may be ``math.inf`` for exactly uniform pivot choice.  Low beta
    concentrates on large gradient magnitudes; ``paper_literal_softmax``
    flips the softmax sign to concentrate on small magnitudes instead, for
    comparison.  ``bayes_suffix_sampling`` draws rollout suffixes directly
    from the policy conditioned on the wanted membership label instead of
    rejection sampling.
    """

    beta: float = math.exp(-5.0)
    retry_limit: int = 32
    pivot_redraws: int = 8
    rng_seed: int | None = None
    paper_literal_softmax: bool = False
    bayes_suffix_sampling: bool = False

    def __post_init__(self):
        if not self.beta > 0.0:
            raise SgsError("pivot temperature must be positive")


def pivot_distribution(grad: dict, beta: float, literal: bool = False) -> dict:
    """Softmax over pivot nodes of |gradient| / beta.

    Infinite beta is exactly uniform.  The default sign puts more mass on
    larger magnitudes as beta shrinks; ``literal=True`` negates the
    exponent.
    """
    if not grad:
        raise SgsError("no pivot nodes to sample from")
    nodes = sorted(grad)
    if math.isinf(beta):
        p = 1.0 / len(nodes)
        return {k: p for k in nodes}
    sign = -1.0 if literal else 1.0
    logits = [sign * abs(grad[k]) / beta for k in nodes]
    mx = max(logits)
    weights = [math.exp(x - mx) for x in logits]
    total = sum(weights)
    return {k: w / total for k, w in zip(nodes, weights)}


def feasibility_check(xs, new: LabeledExample, repr_class) -> bool:
    """Can any task of the class be consistent with ``xs`` plus ``new``?

    For the unconstrained class this is exactly conflict freeness (a
    prefix-tree acceptor realizes any conflict-free finite labeling).  The
    incremental class additionally needs every positive word inside the
    reference language and no mandatory positive labeled negative.
    """
    labels = {}
    for ex in xs:
        labels[ex.word] = ex.label
    if labels.get(new.word, new.label) != new.label:
        return False
    labels[new.word] = new.label
    if isinstance(repr_class, Incremental):
        for word, label in labels.items():
            if label and not accepts(repr_class.reference, word):
                return False
            if not label and word in repr_class.mandatory_positives:
                return False
    return True


def _draw(rng, items, probs) -> object:
    u = rng.random()
    acc = 0.0
    for item, p in zip(items, probs):
        acc += p
        if u < acc:
            return item
    return items[-1]


def _first_move_dist(node, vt, dq, m: Mdp):
    """Policy (ego) or dynamics (env) renormalized to the pivot moves: the
    exact conditional law of the first step given that the path pivots."""
    moves = node.pivot_moves
    if node.kind == EGO:
        logits = [vt.action_value(node.state, a, dq) for a in moves]
        mx = max(logits)
        weights = [math.exp(x - mx) for x in logits]
    else:
        dist = m.trans[(node.state, node.action)]
        weights = [dist[s] for s in moves]
    total = sum(weights)
    return moves, [w / total for w in weights]


def sgs_sample(
    task: TaskSpec,
    xs,
    tree: PrefixTree,
    m: Mdp,
    cfg: SgsConfig,
    ctx: PlannerContext,
    rng=None,
):
    """One surprisal-guided proposal, or None when every retry is exhausted.

    Returns ``(pivot node index, labeled example)``; the example's word is
    the sampled path's trace and its label negates the path's membership in
    ``task``.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    vt, _calib = ctx.table(task.dfa)
    pv = pivot_values_of_task(tree, m, vt)
    grad = surprisal_gradient(tree, pv, m)
    if not grad:
        return None
    dist = pivot_distribution(grad, cfg.beta, literal=cfg.paper_literal_softmax)
    pol = MaxEntPolicy(vt, ctx.competency)
    dfa_at = tree.dfa_states(vt)
    # Redraws go without replacement so an exhausted pivot (one whose wanted
    # label is unreachable) cannot eat the whole retry budget.
    remaining = dict(dist)
    for _ in range(min(cfg.pivot_redraws, len(dist))):
        nodes = sorted(remaining)
        total = sum(remaining[k] for k in nodes)
        k = _draw(rng, nodes, [remaining[k] / total for k in nodes])
        del remaining[k]
        node = tree.nodes[k]
        want_in = grad[k] > 0.0
        prefix = tree.prefix_of(k)
        moves, move_probs = _first_move_dist(node, vt, dfa_at[k], m)
        for _ in range(cfg.retry_limit):
            move = _draw(rng, moves, move_probs)
            if cfg.bayes_suffix_sampling:
                path = _conditioned_rollout(pol, m, rng, prefix, move, want_in)
                if path is None:
                    break  # the wanted label is unreachable through this pivot
            else:
                path = sample_rollout(pol, m, rng, prefix=prefix, forced_first_move=move)
            in_task = path_in_task(task, path, m)
            if in_task != want_in:
                continue
            example = LabeledExample(trace_of(m, path), not in_task, provenance=path)
            if feasibility_check(xs, example, task.repr_class):
                return SgsDraw(k, example, grad[k])
    return None


# -- label-conditioned rollouts ----------------------------------------------


def _acceptance_table(vt):
    """Probability of ending accepted from every product state and action
    row, under the table's own policy.  Cached on the value table."""
    cached = getattr(vt, "_sat_table", None)
    if cached is not None:
        return cached
    comp = vt._comp
    d = vt.dfa
    nd = d.n_states
    g_state = np.empty((comp.n_states, nd))
    g_state[comp.sink_idx] = [1.0 if d.is_accepting(q) else 0.0 for q in range(nd)]
    g_row = np.empty((comp.n_rows, nd))
    for L in comp.levels:
        gnext = g_state[L.e_succ[:, None], vt._dnext[L.e_sym]]
        contrib = L.e_prob[:, None] * gnext
        gl = np.add.reduceat(contrib, L.q_starts, axis=0)
        pi = np.exp(vt._q[L.row_start : L.row_end] - vt._v[L.row_state])
        g_state[L.state_idx] = np.add.reduceat(pi * gl, L.s_starts, axis=0)
        g_row[L.row_start : L.row_end] = gl
    table = (g_state, g_row)
    vt._sat_table = table
    return table


def _conditioned_rollout(pol, m: Mdp, rng, prefix, forced_first_move, want_in: bool):
    """Rollout from the policy conditioned on the final membership label.

    Equivalent to rejection sampling on the label but samples each step from
    the exact conditional.  Returns None when the wanted label has zero
    probability given the prefix and forced move.
    """
    vt = pol.value_table
    g_state, g_row = _acceptance_table(vt)
    comp = vt._comp

    def goal(x):
        return x if want_in else 1.0 - x

    states = list(prefix.states)
    actions = list(prefix.actions)
    dq = 0
    for s in states[1:]:
        dq = vt.dfa_after(dq, s)
    pending = forced_first_move
    while True:
        if len(actions) == len(states):
            s, a = states[-1], actions[-1]
            dist = m.trans[(s, a)]
            succs = list(dist)
            if pending is not None:
                succ = pending
                pending = None
                if dist.get(succ, 0.0) <= 0.0:
                    return None
            else:
                weights = []
                for t in succs:
                    tdq = vt.dfa_after(dq, t)
                    weights.append(dist[t] * goal(g_state[comp.index[t], tdq]))
                total = sum(weights)
                if total <= 0.0:
                    return None
                succ = _draw(rng, succs, [w / total for w in weights])
            states.append(succ)
            dq = vt.dfa_after(dq, succ)
            continue
        s = states[-1]
        if s == SINK:
            break
        if pending is not None:
            a = pending
            pending = None
        else:
            acts, probs = vt.action_dist(s, dq)
            weights = [
                p * goal(g_row[comp.q_row[(s, a)], dq]) for a, p in zip(acts, probs)
            ]
            total = sum(weights)
            if total <= 0.0:
                return None
            a = _draw(rng, acts, [w / total for w in weights])
        actions.append(a)
    path = Path(tuple(states), tuple(actions))
    # The conditional law guarantees the label; guard against numerics.
    return path
