"""Simulated-annealing search over (labeled examples, candidate task) pairs.

The chain state couples an example buffer with a candidate task.  One step
samples a task consistent with the buffer (biased by description-length
change from the current task), asks the surprisal-guided sampler for a path
the candidate plausibly mislabels, unions it into the buffer with the
flipped label, thins the buffer by an independent drop probability, and
accepts or rejects the move on the energy

    U(task) = theta * size(task) + surprisal(task),

with Bottom at +inf.  Periodic resets jump back to the example set of a
softmin-by-energy draw over all previously proposed candidates and resample
a task from the pure size prior.  An enumeration baseline evaluates the
lexicographically smallest demonstration-accepting DFAs in size order.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from .identify import IdentifyQuery, enumerate_consistent, sample_candidate
from .mdp import Mdp, trace_of
from .planner import PlannerContext
from .prefix_tree import PrefixTree, build_tree
from .sgs import SgsConfig, sgs_sample
from .task import (
    BOTTOM,
    Incremental,
    LabeledExample,
    MONOLITHIC,
    TaskSpec,
    dfa_to_text,
    is_bottom,
)


class SearchError(ValueError):
    pass


@dataclass(frozen=True)
class SaState:
    """Annealing state: example buffer, candidate task, candidate energy."""

    examples: frozenset
    task: TaskSpec | object  # TaskSpec or Bottom
    energy: float


@dataclass(frozen=True)
class DissConfig:
    """Knobs of the search loop; every value here is config-visible."""

    theta: float = 1.0 / 50.0
    competency: float = 0.9
    competency_mode: str = "fixed"
    beta: float = math.exp(-5.0)
    p_drop: float = 0.25
    kappa: float = 15  # math.inf disables resets
    t0: float = 10.0
    gamma: float = 0.95
    reset_softmin_temp: float | str = "track_cooling"
    max_iters: int = 100
    max_candidates: int = 20
    max_states: int = 8
    identify_work_cap: int = 200_000
    sgs_retry_limit: int = 32
    sgs_pivot_redraws: int = 8
    paper_literal_softmax: bool = False
    bayes_suffix_sampling: bool = False
    calibration_tol: float = 1e-6
    lambda_max: float = 100.0

    def temperature(self, t: int) -> float:
        return self.t0 * self.gamma**t

    def sgs_config(self) -> SgsConfig:
        return SgsConfig(
            beta=self.beta,
            retry_limit=self.sgs_retry_limit,
            pivot_redraws=self.sgs_pivot_redraws,
            paper_literal_softmax=self.paper_literal_softmax,
            bayes_suffix_sampling=self.bayes_suffix_sampling,
        )


@dataclass
class HistoryEntry:
    """A proposed candidate paired with the example set it was sampled from."""

    examples: frozenset
    task: TaskSpec | object
    energy: float


class RunTrace:
    """Append-only per-iteration record of a run; serializable as JSON lines
    and as a (iteration, min-energy-so-far) summary CSV."""

    def __init__(self, seed: int, kind: str):
        self.seed = seed
        self.kind = kind
        self.rows: list[dict] = []
        self._best = math.inf
        self.best_task: TaskSpec | object = BOTTOM

    def record(self, row: dict, candidates) -> None:
        for task, energy in candidates:
            if energy < self._best:
                self._best = energy
                self.best_task = task
        row["min_energy"] = _json_num(self._best)
        self.rows.append(row)

    @property
    def min_energy(self) -> float:
        return self._best

    def min_energy_curve(self) -> list[float]:
        return [_as_float(r["min_energy"]) for r in self.rows]

    def to_jsonl(self) -> str:
        out = io.StringIO()
        for row in self.rows:
            json.dump(row, out, sort_keys=True)
            out.write("\n")
        return out.getvalue()

    def summary_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["iteration", "min_energy"])
        for row in self.rows:
            writer.writerow([row["iteration"], _as_float(row["min_energy"])])
        return out.getvalue()


def _json_num(x: float):
    return None if math.isinf(x) else x


def _as_float(x) -> float:
    return math.inf if x is None else float(x)


def _task_text(task) -> str | None:
    return None if is_bottom(task) else dfa_to_text(task.dfa)


class SearchContext:
    """Shared machinery of one run: model, demos, planner and identify
    caches, prefix tree, representation class."""

    def __init__(self, demos, m: Mdp, repr_class, cfg: DissConfig, planner=None):
        self.m = m
        self.demos = list(demos)
        self.repr_class = repr_class
        self.cfg = cfg
        self.alphabet = (
            repr_class.reference.alphabet
            if isinstance(repr_class, Incremental)
            else _alphabet_of(m)
        )
        self.tree: PrefixTree = build_tree(self.demos, m)
        self.planner = planner or PlannerContext(
            m,
            self.demos,
            competency=cfg.competency,
            tol=cfg.calibration_tol,
            lam_max=cfg.lambda_max,
            competency_mode=cfg.competency_mode,
        )
        self._identify_cache: dict = {}

    def query(self, examples: frozenset) -> IdentifyQuery:
        return IdentifyQuery(
            examples=examples,
            alphabet=self.alphabet,
            repr_class=self.repr_class,
            max_candidates=self.cfg.max_candidates,
            max_states=self.cfg.max_states,
            work_cap=self.cfg.identify_work_cap,
        )


def _alphabet_of(m: Mdp) -> tuple:
    from .mdp import GRID_ALPHABET

    symbols = set(m.label.values())
    if symbols <= set(GRID_ALPHABET):
        return GRID_ALPHABET
    return tuple(sorted(symbols))


def energy(task, ctx: SearchContext) -> float:
    """theta-weighted size plus demonstration surprisal; Bottom is +inf."""
    if is_bottom(task):
        return math.inf
    return ctx.cfg.theta * task.size_nats + ctx.planner.surprisal(task.dfa)


def energy_delta(u_old: float, u_new: float) -> float:
    """dU = U(old) - U(new), defined for infinities: positive means the new
    state improves."""
    if math.isinf(u_old) and math.isinf(u_new):
        return 0.0
    if math.isinf(u_new):
        return -math.inf
    if math.isinf(u_old):
        return math.inf
    return u_old - u_new


def sa_accept(d_u: float, temperature: float, rng) -> bool:
    """Accept improvements outright, otherwise with probability e^{dU/T}."""
    if temperature <= 0.0:
        raise SearchError("annealing temperature must be positive")
    if d_u > 0.0:
        return True
    return rng.random() < math.exp(d_u / temperature)


def _drop_examples(examples: frozenset, p_drop: float, rng) -> frozenset:
    if p_drop <= 0.0:
        return examples
    kept = [ex for ex in sorted(examples, key=_example_key) if rng.random() >= p_drop]
    return frozenset(kept)


def _example_key(ex: LabeledExample):
    return (ex.word, ex.label)


def _union_example(examples: frozenset, new: LabeledExample) -> frozenset:
    """Union that lets a conjectured label overturn a stale opposite label."""
    kept = {ex for ex in examples if ex.word != new.word}
    kept.add(new)
    return frozenset(kept)


def diss_step(
    state: SaState,
    ctx: SearchContext,
    history: list[HistoryEntry],
    rngs: dict,
    t: int,
):
    """One proposal/accept cycle.  Returns (next state, trace row)."""
    cfg = ctx.cfg
    candidate = sample_candidate(
        ctx.query(state.examples), state.task, rngs["identify"], ctx._identify_cache
    )
    u_cand = energy(candidate, ctx)
    history.append(HistoryEntry(state.examples, candidate, u_cand))

    sgs_row = None
    new_examples = state.examples
    if not is_bottom(candidate):
        drawn = sgs_sample(
            candidate, state.examples, ctx.tree, ctx.m, cfg.sgs_config(), ctx.planner, rngs["sgs"]
        )
        if drawn is not None:
            new_examples = _union_example(state.examples, drawn.example)
            sgs_row = {
                "pivot": drawn.pivot,
                "gradient": drawn.gradient,
                "word": list(drawn.example.word),
                "label": bool(drawn.example.label),
            }
    proposal_examples = _drop_examples(new_examples, cfg.p_drop, rngs["sa"])
    proposal = SaState(proposal_examples, candidate, u_cand)

    d_u = energy_delta(state.energy, u_cand)
    temperature = cfg.temperature(t)
    accepted = sa_accept(d_u, temperature, rngs["sa"])
    row = {
        "iteration": t,
        "dfa": _task_text(candidate),
        "energy": _json_num(u_cand),
        "surprisal": _json_num(
            ctx.planner.surprisal(candidate.dfa) if not is_bottom(candidate) else math.inf
        ),
        "size_nats": None if is_bottom(candidate) else candidate.size_nats,
        "n_examples": len(proposal_examples),
        "accepted": accepted,
        "temperature": temperature,
        "sgs": sgs_row,
        "reset": False,
    }
    return (proposal if accepted else state, row)


def maybe_reset(
    t: int,
    state: SaState,
    ctx: SearchContext,
    history: list[HistoryEntry],
    rngs: dict,
):
    """Softmin-by-energy jump over the proposal history, every kappa steps.

    Returns the replacement state and its history entry, or None off-cycle.
    The example buffer becomes the chosen entry's buffer; the task is
    resampled from the pure size prior over DFAs consistent with it.
    """
    cfg = ctx.cfg
    if math.isinf(cfg.kappa) or t % int(cfg.kappa) != 0 or not history:
        return None
    if cfg.reset_softmin_temp == "track_cooling":
        t_reset = cfg.temperature(t)
    else:
        t_reset = float(cfg.reset_softmin_temp)
    energies = [h.energy for h in history]
    finite = [u for u in energies if not math.isinf(u)]
    if finite:
        u_min = min(finite)
        weights = [
            0.0 if math.isinf(u) else math.exp(-(u - u_min) / t_reset) for u in energies
        ]
    else:
        weights = [1.0] * len(energies)
    total = sum(weights)
    u = rngs["sa"].random() * total
    acc = 0.0
    chosen = history[-1]
    for h, w in zip(history, weights):
        acc += w
        if u < acc:
            chosen = h
            break
    candidate = sample_candidate(
        ctx.query(chosen.examples), BOTTOM, rngs["identify"], ctx._identify_cache
    )
    u_cand = energy(candidate, ctx)
    entry = HistoryEntry(chosen.examples, candidate, u_cand)
    history.append(entry)
    return SaState(chosen.examples, candidate, u_cand), entry


def _rng_streams(seed: int) -> dict:
    ss = np.random.SeedSequence(seed)
    names = ("identify", "sgs", "sa")
    return {
        name: np.random.default_rng(child)
        for name, child in zip(names, ss.spawn(len(names)))
    }


def run_diss(demos, m: Mdp, repr_class, cfg: DissConfig, seed: int = 0, planner=None) -> RunTrace:
    """Full annealing run from the empty buffer and Bottom; deterministic
    given the seed.  A shared planner context may be injected to reuse
    value tables across runs (energies are deterministic, so sharing does
    not change any trace)."""
    ctx = SearchContext(demos, m, repr_class, cfg, planner=planner)
    rngs = _rng_streams(seed)
    state = SaState(frozenset(), BOTTOM, math.inf)
    history: list[HistoryEntry] = []
    trace = RunTrace(seed, "diss")
    for t in range(1, cfg.max_iters + 1):
        state, row = diss_step(state, ctx, history, rngs, t)
        seen = [(history[-1].task, history[-1].energy)]
        reset = maybe_reset(t, state, ctx, history, rngs)
        if reset is not None:
            state, entry = reset
            row["reset"] = True
            row["reset_dfa"] = _task_text(entry.task)
            row["reset_energy"] = _json_num(entry.energy)
            seen.append((entry.task, entry.energy))
        row["seed"] = seed
        trace.record(row, seen)
    return trace


def run_enumeration_baseline(
    demos, m: Mdp, repr_class, cfg: DissConfig, n_enum: int, planner=None
) -> RunTrace:
    """Evaluate the n_enum lexicographically smallest demonstration-accepting
    DFAs in order of increasing size.

    The accept restriction uses the complete demonstrations' traces as
    positive examples; incomplete demonstrations still shape the energies
    but cannot restrict membership.
    """
    ctx = SearchContext(demos, m, repr_class, cfg, planner=planner)
    positives = frozenset(
        LabeledExample(trace_of(m, d), True) for d in demos if d.complete
    )
    query = IdentifyQuery(
        examples=positives,
        alphabet=ctx.alphabet,
        repr_class=repr_class,
        max_candidates=n_enum,
        max_states=cfg.max_states,
    )
    result = enumerate_consistent(query)
    tasks = [TaskSpec(d, repr_class) for d in result.dfas]
    tasks.sort(key=lambda task: task.size_nats)  # stable: enumeration order ties
    trace = RunTrace(0, "enumeration")
    for t, task in enumerate(tasks, start=1):
        u = energy(task, ctx)
        row = {
            "iteration": t,
            "dfa": _task_text(task),
            "energy": _json_num(u),
            "surprisal": _json_num(ctx.planner.surprisal(task.dfa)),
            "size_nats": task.size_nats,
            "n_examples": len(positives),
            "accepted": True,
            "temperature": None,
            "sgs": None,
            "reset": False,
            "seed": 0,
        }
        trace.record(row, [(task, u)])
    return trace
