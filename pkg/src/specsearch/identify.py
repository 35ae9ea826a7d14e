"""Exact DFA identification from labeled examples.

:func:`enumerate_consistent` lists DFAs consistent with a labeled example
set in a total deterministic order: state count ascending, then the number
of non-self-loop edges ascending (self loops are free under the stuttering
size convention, so this tracks description length), then the accepting
bitmask, then the flattened transition table lexicographically.  States are
numbered by breadth-first discovery order (equivalently, first appearance
in a row-major scan of the transition table), which breaks isomorphic
symmetry and guarantees every state is reachable.  Only minimal automata
are emitted, so each language appears exactly once, at its minimal state
count.  Enumeration is complete per state count: no consistent k-state
language is skipped before any (k+1)-state language is emitted.

The engine is a pruned backtracking search over transition entries in
row-major order, with two accelerations that do not change the output: an
exact satisfiability test over example-trie congruences skips provably
empty state-count levels without sweeping them, and for incremental
classes the mandatory positive words are injected as ordinary positive
examples (candidates violating them would be filtered afterwards anyway).
The reference-language containment check stays a post-hoc filter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .task import (
    BOTTOM,
    Bottom,
    Dfa,
    Incremental,
    MONOLITHIC,
    Monolithic,
    TaskSpec,
    _ceil_log2,
    is_bottom,
    language_subset,
    minimize,
)


class IdentifyError(ValueError):
    pass


class _WorkCapExceeded(Exception):
    pass


class _WorkMeter:
    """Deterministic search-effort counter shared across one enumeration."""

    __slots__ = ("left",)

    def __init__(self, budget: int):
        self.left = budget

    def spend(self, amount: int = 1) -> None:
        self.left -= amount
        if self.left < 0:
            raise _WorkCapExceeded


@dataclass(frozen=True)
class IdentifyQuery:
    """What to enumerate: examples, alphabet, representation class, caps.

    ``work_cap`` bounds the backtracking effort deterministically; when it
    is exhausted the result is the correct ordered prefix found so far,
    flagged truncated.
    """

    examples: frozenset
    alphabet: tuple[str, ...]
    repr_class: Monolithic | Incremental = MONOLITHIC
    max_candidates: int = 20
    max_states: int = 8
    work_cap: int = 2_000_000


@dataclass
class EnumerationResult:
    dfas: list[Dfa] = field(default_factory=list)
    conflict: bool = False
    truncated: bool = False  # state cap hit before max_candidates were found


def _dedup_examples(query: IdentifyQuery):
    """Examples as sorted (symbol-index tuple, label) pairs; None on conflict."""
    sym_index = {sym: i for i, sym in enumerate(query.alphabet)}
    pairs = [(ex.word, ex.label) for ex in query.examples]
    if isinstance(query.repr_class, Incremental):
        pairs.extend((w, True) for w in query.repr_class.mandatory_positives)
    labels: dict[tuple[int, ...], bool] = {}
    for word, label in pairs:
        try:
            key = tuple(sym_index[sym] for sym in word)
        except KeyError as exc:
            raise IdentifyError(f"example symbol outside the alphabet: {word!r}") from exc
        label = bool(label)
        if labels.setdefault(key, label) != label:
            return None
    return sorted(labels.items())


def _example_trie(examples):
    """Prefix trie of the example words: per node a symbol-indexed child map
    and an optional label."""
    children: list[dict[int, int]] = [{}]
    label: list[bool | None] = [None]
    for word, lab in examples:
        cur = 0
        for sym in word:
            nxt = children[cur].get(sym)
            if nxt is None:
                nxt = len(children)
                children[cur][sym] = nxt
                children.append({})
                label.append(None)
            cur = nxt
        label[cur] = lab
    return children, label


def _level_satisfiable(n: int, examples, meter: _WorkMeter) -> bool:
    """Exact test whether ANY n-state DFA is consistent with the examples.

    Backtracks over assignments of DFA states to example-trie nodes in BFS
    order.  An assignment is feasible iff it is a congruence (a state/symbol
    pair always maps to the same state) and no state carries both labels;
    any such assignment extends to a total DFA by completing unconstrained
    transitions arbitrarily.  State names are searched in discovery order,
    so permutations are not re-explored.  This prunes far earlier than a
    transition-table sweep and lets provably empty levels be skipped.
    """
    if not examples:
        return True
    children, label = _example_trie(examples)
    order = [0]
    parent_of: dict[int, tuple[int, int]] = {}
    for u in order:
        for sym in sorted(children[u]):
            c = children[u][sym]
            parent_of[c] = (u, sym)
            order.append(c)

    assign = [-1] * len(children)
    delta: dict[tuple[int, int], int] = {}
    state_label: list[bool | None] = [None] * n

    def place(i: int, max_used: int) -> bool:
        meter.spend()
        if i == len(order):
            return True
        u = order[i]
        if u == 0:
            candidates = (0,)
            key = None
        else:
            p, sym = parent_of[u]
            key = (assign[p], sym)
            forced = delta.get(key)
            if forced is not None:
                candidates = (forced,)
            else:
                candidates = range(min(n - 1, max_used + 1) + 1)
        lu = label[u]
        for q in candidates:
            if lu is not None and state_label[q] is not None and state_label[q] != lu:
                continue
            assign[u] = q
            claimed_label = lu is not None and state_label[q] is None
            if claimed_label:
                state_label[q] = lu
            claimed_delta = key is not None and key not in delta
            if claimed_delta:
                delta[key] = q
            if place(i + 1, max(max_used, q)):
                return True
            if claimed_delta:
                del delta[key]
            if claimed_label:
                state_label[q] = None
            assign[u] = -1
        return False

    return place(0, 0)


def _level_candidates(n: int, n_sym: int, e_budget: int, examples, emit, meter: _WorkMeter) -> bool:
    """All canonical n-state transition tables with exactly ``e_budget``
    non-self-loop edges that are consistent with the examples, emitted in
    (accepting mask, row-major delta) lexicographic order.

    ``emit(rows, mask)`` returns False to stop; the function then also
    returns False.  Canonical means: a transition entry may name a new state
    only if it is the next unused index, and every state must be named
    somewhere, so state numbering follows first discovery.
    """
    n_entries = n * n_sym
    n_words = len(examples)
    words = [w for w, _ in examples]
    labels = [lab for _, lab in examples]

    for mask in range(1 << n):
        delta = [-1] * n_entries
        pos = [0] * n_words
        state = [0] * n_words

        def advance_all(entry: int, trail: list) -> bool:
            """Advance words stalled at ``entry`` (all words when entry < 0)
            as far as the assigned entries permit; False on a label clash.
            Snapshots go to ``trail`` for undo."""
            for w in range(n_words):
                word = words[w]
                if pos[w] >= len(word):
                    if entry >= 0:
                        continue  # finished and checked earlier
                elif entry >= 0 and state[w] * n_sym + word[pos[w]] != entry:
                    continue
                trail.append((w, pos[w], state[w]))
                while pos[w] < len(word):
                    e = state[w] * n_sym + word[pos[w]]
                    if delta[e] < 0:
                        break
                    state[w] = delta[e]
                    pos[w] += 1
                if pos[w] == len(word):
                    if bool((mask >> state[w]) & 1) != labels[w]:
                        return False
            return True

        def undo(trail: list) -> None:
            for w, p, st in reversed(trail):
                pos[w], state[w] = p, st

        init_trail: list = []
        if not advance_all(-1, init_trail):
            undo(init_trail)
            continue

        def dfs(entry: int, max_used: int, edges: int) -> bool:
            meter.spend()
            if entry == n_entries:
                if max_used != n - 1 or edges != e_budget:
                    return True  # not canonical / wrong edge count
                rows = tuple(
                    tuple(delta[q * n_sym : (q + 1) * n_sym]) for q in range(n)
                )
                return emit(rows, mask)
            row = entry // n_sym
            if entry % n_sym == 0 and row > max_used:
                return True  # row's state was never discovered: not canonical
            left = n_entries - entry - 1
            for val in range(min(n - 1, max_used + 1) + 1):
                new_edges = edges + (1 if val != row else 0)
                if new_edges > e_budget or new_edges + left < e_budget:
                    continue
                new_used = max(max_used, val)
                if (n - 1 - new_used) > left:
                    continue  # too few entries left to discover every state
                delta[entry] = val
                trail: list = []
                ok = advance_all(entry, trail)
                if ok and not dfs(entry + 1, new_used, new_edges):
                    undo(trail)
                    delta[entry] = -1
                    return False
                undo(trail)
                delta[entry] = -1
            return True

        stopped = not dfs(0, 0, 0)
        undo(init_trail)
        if stopped:
            return False
    return True


def enumerate_consistent(query: IdentifyQuery) -> EnumerationResult:
    """First ``max_candidates`` consistent DFAs in the canonical order.

    Conflicting examples yield the distinguished empty result; running out
    of states first yields a truncated, flagged list.
    """
    examples = _dedup_examples(query)
    if examples is None:
        return EnumerationResult(conflict=True)
    reference = (
        query.repr_class.reference
        if isinstance(query.repr_class, Incremental)
        else None
    )
    found: list[Dfa] = []

    def emit(rows, mask) -> bool:
        d = Dfa(n, query.alphabet, rows, mask)
        if minimize(d) != d:
            return True  # this language already appeared at a smaller level
        if reference is not None and not language_subset(d, reference):
            return True  # filtered out; keep enumerating for survivors
        found.append(d)
        return len(found) < query.max_candidates

    n_sym = len(query.alphabet)
    meter = _WorkMeter(query.work_cap)
    stop = False
    try:
        for n in range(1, query.max_states + 1):
            if stop or len(found) >= query.max_candidates:
                break
            if not _level_satisfiable(n, examples, meter):
                continue
            # Discovering all n states takes at least n-1 non-self edges.
            for e_budget in range(max(0, n - 1), n * n_sym + 1):
                if not _level_candidates(n, n_sym, e_budget, examples, emit, meter):
                    stop = True
                    break
    except _WorkCapExceeded:
        pass  # found is a correct ordered prefix; flag it truncated below
    return EnumerationResult(found, truncated=len(found) < query.max_candidates)


def _delta_description_bits(a: Dfa, b: Dfa) -> float:
    """Bits to describe canonical minimal DFA ``a`` as an edit of ``b``:
    the state-count change plus the symmetric difference of the
    non-self-loop edge sets, priced like the absolute encoding."""
    n = max(a.n_states, b.n_states)
    state_bits = abs(a.n_states - b.n_states) * _ceil_log2(n)
    edge_bits = 2 * _ceil_log2(n) + _ceil_log2(len(a.alphabet))
    diff = len(set(a.edges()) ^ set(b.edges()))
    return state_bits + diff * edge_bits


def sample_candidate(query: IdentifyQuery, reference, rng, enum_cache: dict | None = None):
    """Draw one consistent task, biased toward small description length.

    With a reference task the weight of a candidate is exponential in the
    (negated) number of bits needed to describe it given the reference; with
    no reference (Bottom or None) the weight is the plain size prior.
    Returns Bottom when nothing is consistent.  ``enum_cache`` memoizes the
    (deterministic) enumeration across calls with equal queries.
    """
    if enum_cache is not None:
        result = enum_cache.get(query)
        if result is None:
            result = enumerate_consistent(query)
            enum_cache[query] = result
    else:
        result = enumerate_consistent(query)
    if not result.dfas:
        return BOTTOM
    specs = [TaskSpec(d, query.repr_class) for d in result.dfas]
    if reference is None or is_bottom(reference):
        log_w = [-spec.size_nats for spec in specs]
    else:
        ref_dfa = reference.dfa if isinstance(reference, TaskSpec) else reference
        ln2 = math.log(2.0)
        log_w = [
            -_delta_description_bits(spec.dfa, ref_dfa) * ln2 for spec in specs
        ]
    mx = max(log_w)
    weights = [math.exp(x - mx) for x in log_w]
    total = sum(weights)
    u = rng.random() * total
    acc = 0.0
    for spec, w in zip(specs, weights):
        acc += w
        if u < acc:
            return spec
    return specs[-1]
