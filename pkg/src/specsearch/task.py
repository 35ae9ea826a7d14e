"""DFA task specifications over a finite symbol alphabet.

A task is the set of complete paths whose color traces a DFA accepts,
together with a description-length size.  DFAs are compared and hashed by
canonical minimal form, so caches keyed by a task are keyed by its language
rather than its syntax.

The size of a DFA uses stuttering semantics (self loops are free):

    bits(d) = ceil(log2(n+1)) + n + ceil(log2 n)
              + E * (2*ceil(log2 n) + ceil(log2 |alphabet|))

where ``E`` counts the non-self-loop edges, and the size in nats is
``bits * ln 2``.  Incremental tasks are sized relative to their reference
DFA, ``bits(d) - bits(reference)``, which may be negative.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

from .mdp import Mdp, Path, trace_of


class TaskError(ValueError):
    """Malformed automaton or inconsistent task construction."""


def _ceil_log2(x: int) -> int:
    if x < 1:
        raise TaskError("ceil_log2 of a nonpositive number")
    return (x - 1).bit_length()


@dataclass(frozen=True)
class Dfa:
    """Complete DFA with start state 0 and an accepting-state bitmask.

    ``delta[q][i]`` is the successor of state ``q`` on the i-th alphabet
    symbol; ``accepting`` has bit ``q`` set iff state ``q`` accepts.
    """

    n_states: int
    alphabet: tuple[str, ...]
    delta: tuple[tuple[int, ...], ...]
    accepting: int

    def __post_init__(self):
        if self.n_states < 1:
            raise TaskError("a DFA needs at least one state")
        if not self.alphabet or len(set(self.alphabet)) != len(self.alphabet):
            raise TaskError("alphabet must be a nonempty ordered set")
        if len(self.delta) != self.n_states:
            raise TaskError("delta must have one row per state")
        for row in self.delta:
            if len(row) != len(self.alphabet):
                raise TaskError("delta rows must cover the whole alphabet")
            for q in row:
                if not 0 <= q < self.n_states:
                    raise TaskError(f"delta target {q} out of range")
        if not 0 <= self.accepting < (1 << self.n_states):
            raise TaskError("accepting bitmask out of range")
        object.__setattr__(
            self, "_sym_index", {sym: i for i, sym in enumerate(self.alphabet)}
        )

    def symbol_index(self, sym: str) -> int:
        try:
            return self._sym_index[sym]
        except KeyError:
            raise TaskError(f"symbol {sym!r} not in alphabet") from None

    def step(self, q: int, sym: str) -> int:
        return self.delta[q][self.symbol_index(sym)]

    def is_accepting(self, q: int) -> bool:
        return bool((self.accepting >> q) & 1)

    def run(self, word) -> int:
        q = 0
        for sym in word:
            q = self.delta[q][self.symbol_index(sym)]
        return q

    def edges(self) -> tuple[tuple[int, str, int], ...]:
        """Non-self-loop edges as (state, symbol, target) triples."""
        out = []
        for q, row in enumerate(self.delta):
            for i, tgt in enumerate(row):
                if tgt != q:
                    out.append((q, self.alphabet[i], tgt))
        return tuple(out)


def accepts(d: Dfa, w) -> bool:
    """Run the DFA over a word; foreign symbols raise."""
    return d.is_accepting(d.run(w))


def minimize(d: Dfa) -> Dfa:
    """Language-equivalent minimal DFA with canonical BFS state numbering.

    States are renumbered by breadth-first discovery order from the start
    state, scanning symbols in alphabet order, which makes the encoding of
    equal languages identical.
    """
    # Reachable states.
    reach = [0]
    seen = {0}
    for q in reach:
        for tgt in d.delta[q]:
            if tgt not in seen:
                seen.add(tgt)
                reach.append(tgt)
    # Moore partition refinement over reachable states.
    block = {q: int(d.is_accepting(q)) for q in reach}
    n_blocks = len(set(block.values()))
    while True:
        sigs = {}
        for q in reach:
            sig = (block[q], tuple(block[d.delta[q][i]] for i in range(len(d.alphabet))))
            sigs.setdefault(sig, []).append(q)
        if len(sigs) == n_blocks:
            break
        n_blocks = len(sigs)
        for idx, members in enumerate(sigs.values()):
            for q in members:
                block[q] = idx
    # Canonical BFS numbering of the quotient.
    rep = {}
    for q in reach:
        rep.setdefault(block[q], q)
    order = {block[0]: 0}
    queue = deque([block[0]])
    while queue:
        b = queue.popleft()
        q = rep[b]
        for tgt in d.delta[q]:
            tb = block[tgt]
            if tb not in order:
                order[tb] = len(order)
                queue.append(tb)
    n = len(order)
    delta = [[0] * len(d.alphabet) for _ in range(n)]
    accepting = 0
    for b, new_q in order.items():
        q = rep[b]
        if d.is_accepting(q):
            accepting |= 1 << new_q
        for i in range(len(d.alphabet)):
            delta[new_q][i] = order[block[d.delta[q][i]]]
    return Dfa(n, d.alphabet, tuple(tuple(row) for row in delta), accepting)


def dfa_size_bits(d: Dfa) -> int:
    n = d.n_states
    e = len(d.edges())
    edge_bits = 2 * _ceil_log2(n) + _ceil_log2(len(d.alphabet))
    return _ceil_log2(n + 1) + n + _ceil_log2(n) + e * edge_bits


def dfa_size_nats(d: Dfa) -> float:
    return dfa_size_bits(d) * math.log(2.0)


def language_subset(a: Dfa, b: Dfa) -> bool:
    """True iff the language of ``a`` is contained in that of ``b``."""
    return subset_counterexample(a, b) is None


def subset_counterexample(a: Dfa, b: Dfa):
    """Shortest word accepted by ``a`` but rejected by ``b``, else None."""
    if a.alphabet != b.alphabet:
        raise TaskError("subset check needs a shared alphabet")
    seen = {(0, 0)}
    queue = deque([((0, 0), ())])
    while queue:
        (qa, qb), word = queue.popleft()
        if a.is_accepting(qa) and not b.is_accepting(qb):
            return word
        for i, sym in enumerate(a.alphabet):
            nxt = (a.delta[qa][i], b.delta[qb][i])
            if nxt not in seen:
                seen.add(nxt)
                queue.append((nxt, word + (sym,)))
    return None


def same_language(a: Dfa, b: Dfa) -> bool:
    return minimize(a) == minimize(b)


# -- representation classes and task specifications -------------------------


@dataclass(frozen=True)
class Monolithic:
    """Unconstrained representation class: any DFA over the alphabet."""


MONOLITHIC = Monolithic()


@dataclass(frozen=True)
class Incremental:
    """Representation class restricted by prior knowledge.

    A member task must accept every mandatory positive word and its language
    must be contained in the reference DFA's language.  Sizes are measured
    relative to the reference.
    """

    reference: Dfa
    mandatory_positives: frozenset = frozenset()


class Bottom:
    """The distinguished no-task value; its energy is +inf by convention."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "Bottom"


BOTTOM = Bottom()


def is_bottom(x) -> bool:
    return isinstance(x, Bottom)


@dataclass(frozen=True)
class TaskSpec:
    """A hypothesis task: canonical minimal DFA plus its size in nats.

    The constructor minimizes the given DFA, checks incremental class
    constraints, and derives the size, so equal languages compare equal.
    """

    dfa: Dfa
    repr_class: Monolithic | Incremental = MONOLITHIC
    size_nats: float = field(init=False)

    def __post_init__(self):
        canon = minimize(self.dfa)
        object.__setattr__(self, "dfa", canon)
        rc = self.repr_class
        if isinstance(rc, Incremental):
            if canon.alphabet != rc.reference.alphabet:
                raise TaskError("task and reference alphabets differ")
            for w in rc.mandatory_positives:
                if not accepts(canon, w):
                    raise TaskError(f"mandatory positive {w!r} rejected")
            if not language_subset(canon, rc.reference):
                raise TaskError("task language exceeds the reference language")
            size = dfa_size_nats(canon) - dfa_size_nats(minimize(rc.reference))
        else:
            size = dfa_size_nats(canon)
        object.__setattr__(self, "size_nats", size)


@dataclass(frozen=True)
class LabeledExample:
    """A trace together with its conjectured or observed membership label."""

    word: tuple[str, ...]
    label: bool
    provenance: Path | None = field(default=None, compare=False)


def path_in_task(t: TaskSpec, p: Path, m: Mdp) -> bool:
    """Membership of a complete path, decided on its color trace."""
    if not p.complete:
        raise TaskError("task membership is defined on complete paths")
    return accepts(t.dfa, trace_of(m, p))


def consistent(t: TaskSpec, xs) -> bool:
    """True iff every labeled example agrees with the task."""
    return all(accepts(t.dfa, ex.word) == ex.label for ex in xs)


# -- exchange formats --------------------------------------------------------


def dfa_to_text(d: Dfa) -> str:
    """One-line textual form: states, alphabet, bitmask, non-self-loop edges."""
    edges = " ".join(f"{q},{sym}->{tgt}" for q, sym, tgt in d.edges())
    return (
        f"n={d.n_states}; sigma={','.join(d.alphabet)}; "
        f"accept={d.accepting}; edges={edges}"
    )


def dfa_from_text(text: str) -> Dfa:
    fields = {}
    for part in text.strip().split(";"):
        part = part.strip()
        if not part:
            continue
        key, _, value = part.partition("=")
        fields[key.strip()] = value.strip()
    try:
        n = int(fields["n"])
        alphabet = tuple(s.strip() for s in fields["sigma"].split(","))
        accepting = int(fields["accept"])
    except (KeyError, ValueError) as exc:
        raise TaskError(f"bad DFA text {text!r}") from exc
    delta = [[q] * len(alphabet) for q in range(n)]
    sym_index = {sym: i for i, sym in enumerate(alphabet)}
    edge_field = fields.get("edges", "")
    for tok in edge_field.split():
        try:
            src_sym, _, tgt = tok.partition("->")
            src, sym = src_sym.split(",")
            delta[int(src)][sym_index[sym]] = int(tgt)
        except (KeyError, ValueError, IndexError) as exc:
            raise TaskError(f"bad edge token {tok!r}") from exc
    return Dfa(n, alphabet, tuple(tuple(row) for row in delta), accepting)


def load_dfa(path) -> Dfa:
    with open(path, "r", encoding="utf-8") as fh:
        text = " ".join(
            line for line in fh.read().splitlines() if not line.lstrip().startswith("#")
        )
    return dfa_from_text(text)


def dfa_to_dot(d: Dfa, name: str = "dfa") -> str:
    """Graphviz rendering; accepting states are double circles, self loops
    are omitted per the stuttering convention, and parallel edges merge
    their symbol labels."""
    lines = [f"digraph {name} {{", "  rankdir=LR;", '  init [shape=point, label=""];']
    for q in range(d.n_states):
        shape = "doublecircle" if d.is_accepting(q) else "circle"
        lines.append(f"  q{q} [shape={shape}, label=\"{q}\"];")
    lines.append("  init -> q0;")
    grouped: dict[tuple[int, int], list[str]] = {}
    for q, sym, tgt in d.edges():
        grouped.setdefault((q, tgt), []).append(sym)
    for (q, tgt), syms in sorted(grouped.items()):
        label = ",".join(syms)
        lines.append(f"  q{q} -> q{tgt} [label=\"{label}\"];")
    lines.append("}")
    return "\n".join(lines) + "\n"
