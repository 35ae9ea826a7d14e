"""Demonstration prefix tree: pivot moves, pivot values, and the surprisal
of the local policy they induce.

Every node is a prefix of at least one demonstration.  An *ego* node ends in
a state (the demonstrator moves next); an *env* node ends in an action (the
environment resolves it).  A path *pivots* at a node when that node is its
longest prefix inside the tree; the node's pivot moves are the off-tree
actions (ego) or off-tree positive-probability successor states (env).

Aggregating planner values over a node's pivot moves gives its pivot value.
Together with the fixed constants at sink leaves, the pivot values determine
derived values for every node, hence a local policy on tree edges, hence the
surprisal of the demonstrations as a differentiable function of the pivot
value vector.  The demonstration surprisal of a task equals this function
evaluated at the task's own pivot values, and the gradient has a closed form
in terms of edge probabilities only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mdp import SINK, Mdp, Path
from .planner import ValueTable

EGO = "ego"
ENV = "env"


class PrefixTreeError(ValueError):
    pass


@dataclass
class TreeNode:
    idx: int
    parent: int  # -1 at the root
    kind: str  # EGO or ENV
    state: object  # ego: last state; env: state the pending action was taken in
    action: object  # env nodes: the pending action, else None
    move: object  # edge label from the parent (action or state)
    count: int = 0  # demonstrations whose prefix reaches this node
    terminating: int = 0  # demonstrations ending exactly here
    children: dict = field(default_factory=dict)  # move -> child idx
    pivot_moves: tuple = ()

    @property
    def is_leaf(self) -> bool:
        return not self.children


class PrefixTree:
    """Immutable after :func:`build_tree`; value queries are pure."""

    def __init__(self, nodes: list[TreeNode], n_demos: int):
        self.nodes = nodes
        self.n_demos = n_demos
        self._dfa_cache: dict = {}

    def __len__(self):
        return len(self.nodes)

    @property
    def root(self) -> TreeNode:
        return self.nodes[0]

    def prefix_of(self, idx: int) -> Path:
        """Reconstruct the alternating path of a node."""
        states, actions = [], []
        node = self.nodes[idx]
        while node.parent >= 0:
            if node.kind == ENV:
                actions.append(node.move)
            else:
                states.append(node.move)
            node = self.nodes[node.parent]
        states.append(node.state)
        return Path(tuple(reversed(states)), tuple(reversed(actions)))

    def pivot_nodes(self) -> list[int]:
        return [n.idx for n in self.nodes if n.pivot_moves]

    def dfa_states(self, vt: ValueTable) -> list[int]:
        """DFA state at every node under the table's task, advancing on the
        label of each ego node's state (the start label is not consumed)."""
        key = vt.dfa
        hit = self._dfa_cache.get(key)
        if hit is not None:
            return hit
        out = [0] * len(self.nodes)
        for node in self.nodes[1:]:
            dq = out[node.parent]
            if node.kind == EGO:
                dq = vt.dfa_after(dq, node.state)
            out[node.idx] = dq
        self._dfa_cache[key] = out
        return out


def build_tree(demos, m: Mdp) -> PrefixTree:
    """Prefix tree of a demonstration multiset, with pivot moves attached."""
    root = TreeNode(idx=0, parent=-1, kind=EGO, state=m.start, action=None, move=None)
    nodes = [root]
    n_demos = 0
    for demo in demos:
        if demo.states[0] != m.start:
            raise PrefixTreeError("demonstrations must start at the start state")
        n_demos += 1
        cur = root
        cur.count += 1
        for s, a, succ in demo.steps():
            cur = _extend(nodes, cur, ENV, move=a, state=s, action=a)
            if succ is not None:
                cur = _extend(nodes, cur, EGO, move=succ, state=succ, action=None)
        cur.terminating += 1
    for node in nodes:
        if node.kind == EGO:
            if node.state == SINK:
                node.pivot_moves = ()
            else:
                node.pivot_moves = tuple(
                    a for a in m.actions_at[node.state] if a not in node.children
                )
        else:
            dist = m.trans[(node.state, node.action)]
            node.pivot_moves = tuple(s for s in dist if s not in node.children)
    return PrefixTree(nodes, n_demos)


def _extend(nodes, cur: TreeNode, kind: str, move, state, action) -> TreeNode:
    child_idx = cur.children.get(move)
    if child_idx is None:
        child = TreeNode(
            idx=len(nodes), parent=cur.idx, kind=kind, state=state, action=action, move=move
        )
        nodes.append(child)
        cur.children[move] = child.idx
    else:
        child = nodes[child_idx]
    child.count += 1
    return child


def pivot_of_path(tree: PrefixTree, path: Path) -> int | None:
    """Node where a path first leaves the tree, or None if it never does."""
    cur = tree.root
    for s, a, succ in path.steps():
        nxt = cur.children.get(a)
        if nxt is None:
            return cur.idx
        cur = tree.nodes[nxt]
        if succ is None:
            return None
        nxt = cur.children.get(succ)
        if nxt is None:
            return cur.idx
        cur = tree.nodes[nxt]
    return None


@dataclass(frozen=True)
class PivotValues:
    """Pivot value per pivot-capable node plus the fixed sink-leaf values."""

    values: dict
    leaf_values: dict
    lam: float


def pivot_values_of_task(tree: PrefixTree, m: Mdp, vt: ValueTable) -> PivotValues:
    """Aggregate the planner's values over each node's off-tree moves.

    Ego nodes take the log-sum-exp of the off-tree action values; env nodes
    take the expectation of successor values with the dynamics renormalized
    to the off-tree states.  A leaf reached by an incomplete demonstration
    has every action off-tree, so its pivot value is exactly the planner's
    state value there.  Sink leaves carry fixed constants instead.
    """
    dfa_at = tree.dfa_states(vt)
    values = {}
    leaf_values = {}
    for node in tree.nodes:
        dq = dfa_at[node.idx]
        if node.kind == EGO and node.state == SINK:
            leaf_values[node.idx] = vt.value(SINK, dq)
            continue
        if not node.pivot_moves:
            continue
        if node.kind == EGO:
            logits = [vt.action_value(node.state, a, dq) for a in node.pivot_moves]
            mx = max(logits)
            values[node.idx] = mx + math.log(sum(math.exp(x - mx) for x in logits))
        else:
            dist = m.trans[(node.state, node.action)]
            mass = sum(dist[s] for s in node.pivot_moves)
            acc = 0.0
            for s in node.pivot_moves:
                acc += dist[s] * vt.value(s, vt.dfa_after(dq, s))
            values[node.idx] = acc / mass
    return PivotValues(values, leaf_values, vt.lam)


def derived_values(tree: PrefixTree, pv: PivotValues, m: Mdp) -> np.ndarray:
    """Node values implied by the pivot values, bottom-up.

    Ego: log-sum-exp of child values plus the node's own pivot value when it
    has one.  Env: dynamics-weighted sum of child values plus the off-tree
    probability mass times the pivot value.  Sink leaves use their constant.
    """
    vhat = np.zeros(len(tree.nodes))
    for node in reversed(tree.nodes):  # children always have larger indices
        if node.idx in pv.leaf_values:
            vhat[node.idx] = pv.leaf_values[node.idx]
            continue
        if node.kind == EGO:
            terms = [vhat[c] for c in node.children.values()]
            if node.idx in pv.values:
                terms.append(pv.values[node.idx])
            if not terms:
                raise PrefixTreeError(f"ego node {node.idx} has no values to aggregate")
            mx = max(terms)
            vhat[node.idx] = mx + math.log(sum(math.exp(x - mx) for x in terms))
        else:
            dist = m.trans[(node.state, node.action)]
            acc = 0.0
            for move, c in node.children.items():
                acc += dist[move] * vhat[c]
            if node.idx in pv.values:
                off_mass = sum(dist[s] for s in node.pivot_moves)
                acc += off_mass * pv.values[node.idx]
            vhat[node.idx] = acc
    return vhat


def edge_prob(tree: PrefixTree, vhat: np.ndarray, m: Mdp, child_idx: int) -> float:
    """Probability of the unique edge into ``child_idx`` under the local
    policy: exp(value difference) on ego edges, the dynamics on env edges."""
    child = tree.nodes[child_idx]
    if child.parent < 0:
        raise PrefixTreeError("the root has no incoming edge")
    if child.kind == ENV:  # parent is ego: a decision edge
        return math.exp(vhat[child.idx] - vhat[child.parent])
    parent = tree.nodes[child.parent]
    return m.trans[(parent.state, parent.action)][child.move]


def pivot_surprisal(tree: PrefixTree, pv: PivotValues, m: Mdp) -> float:
    """Count-weighted negative log probability of all tree edges."""
    vhat = derived_values(tree, pv, m)
    total = 0.0
    for node in tree.nodes[1:]:
        p = edge_prob(tree, vhat, m, node.idx)
        if p <= 0.0:
            return math.inf
        total -= node.count * math.log(p)
    return total


def surprisal_gradient(tree: PrefixTree, pv: PivotValues, m: Mdp) -> dict:
    """Closed-form gradient of the pivot surprisal in the pivot values.

    The derivative at pivot node k sums, over decision edges (i, j), the
    edge count times the difference between the probabilities of reaching k
    from i and from j and then pivoting there; only ancestors of k
    contribute, so each coordinate is a walk up the tree.
    """
    vhat = derived_values(tree, pv, m)
    eprob = [0.0] * len(tree.nodes)
    for node in tree.nodes[1:]:
        eprob[node.idx] = edge_prob(tree, vhat, m, node.idx)
    # Net edge-count coefficient per node: ego nodes source their outgoing
    # decision edges, env nodes sink their incoming one.
    coef = [0.0] * len(tree.nodes)
    for node in tree.nodes:
        if node.kind == EGO:
            coef[node.idx] = sum(tree.nodes[c].count for c in node.children.values())
        else:
            coef[node.idx] = -node.count
    grad = {}
    for k in tree.pivot_nodes():
        escape = 1.0 - sum(eprob[c] for c in tree.nodes[k].children.values())
        total = 0.0
        reach = 1.0  # probability of the walk from the current ancestor to k
        node = tree.nodes[k]
        while True:
            total += coef[node.idx] * reach
            if node.parent < 0:
                break
            reach *= eprob[node.idx]
            node = tree.nodes[node.parent]
        grad[k] = total * escape
    return grad


def tree_to_dot(
    tree: PrefixTree,
    pv: PivotValues | None = None,
    vhat: np.ndarray | None = None,
    grad: dict | None = None,
) -> str:
    """Diagnostic DOT rendering with optional value and gradient annotations."""
    lines = ["digraph prefix_tree {"]
    for node in tree.nodes:
        bits = [f"{node.idx}:{node.kind}"]
        if node.kind == EGO:
            bits.append(repr(node.state))
        else:
            bits.append(f"{node.state!r}.{node.action!r}")
        if pv is not None and node.idx in pv.values:
            bits.append(f"V={pv.values[node.idx]:.3f}")
        if vhat is not None:
            bits.append(f"Vhat={vhat[node.idx]:.3f}")
        if grad is not None and node.idx in grad:
            bits.append(f"g={grad[node.idx]:+.3f}")
        shape = "box" if node.kind == ENV else "ellipse"
        label = "\\n".join(bits)
        lines.append(f'  n{node.idx} [shape={shape}, label="{label}"];')
    for node in tree.nodes[1:]:
        lines.append(f'  n{node.parent} -> n{node.idx} [label="{node.count}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
