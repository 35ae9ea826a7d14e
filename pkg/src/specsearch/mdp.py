"""Finite stochastic dynamics models with an absorbing end-of-episode sink.

The central object is :class:`Mdp`: a finite MDP whose every episode funnels
into a distinguished sink state ``$``.  :func:`build_gridworld` produces the
colored, slippery grid worlds used by the bundled experiments (time is baked
into the state, so the horizon is a property of the dynamics and every value
table stays finite).  Path utilities (validation, color traces, exhaustive
enumeration) support the planner and the brute-force test oracles.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Mapping, Sequence

SINK = "$"

GRID_ACTIONS = ("up", "down", "left", "right")
GRID_ALPHABET = ("r", "b", "y", "n", "_")

_MOVES = {"up": (0, -1), "down": (0, 1), "left": (-1, 0), "right": (1, 0)}
_ACTION_CHARS = {"U": "up", "D": "down", "L": "left", "R": "right"}
_CHAR_ACTIONS = {v: k for k, v in _ACTION_CHARS.items()}
_TILE_CHARS = {"r": "r", "b": "b", "y": "y", "n": "n", ".": "_", "_": "_"}

_PROB_TOL = 1e-12


class MdpError(ValueError):
    """Malformed dynamics model, grid description, or query."""


class EnumerationCapError(RuntimeError):
    """Exhaustive path enumeration would exceed the configured cap."""


class Mdp:
    """Finite MDP with a distinguished absorbing sink state ``$``.

    Parameters
    ----------
    states:
        Iterable of hashable state ids.  Must contain :data:`SINK`.
    actions_at:
        Map ``state -> ordered action ids`` (nonempty, no duplicates).
    start:
        Initial state.
    trans:
        Map ``(state, action) -> {successor: probability}``.
    label:
        Map ``state -> alphabet symbol``; states absent from the map (always
        including the sink) are unlabeled and contribute nothing to traces.

    Instances are immutable after construction and safe to share across
    threads; all operations are pure.
    """

    def __init__(self, states, actions_at, start, trans, label):
        self.states = tuple(states)
        self.sink = SINK
        self.start = start
        self.actions_at = {s: tuple(actions_at[s]) for s in self.states}
        self.trans = {}
        for s in self.states:
            for a in self.actions_at[s]:
                if (s, a) not in trans:
                    raise MdpError(f"missing transition distribution for {(s, a)!r}")
                self.trans[(s, a)] = dict(trans[(s, a)])
        self.label = {s: label[s] for s in self.states if label.get(s) is not None}
        self._validate()

    def _validate(self):
        seen = set(self.states)
        if len(seen) != len(self.states):
            raise MdpError("duplicate state ids")
        if SINK not in seen:
            raise MdpError("state set must contain the sink '$'")
        if self.start not in seen:
            raise MdpError(f"start state {self.start!r} not a state")
        if SINK in self.label:
            raise MdpError("the sink must be unlabeled")
        for s in self.states:
            acts = self.actions_at[s]
            if not acts:
                raise MdpError(f"state {s!r} has no actions")
            if len(set(acts)) != len(acts):
                raise MdpError(f"state {s!r} has duplicate action ids")
        for (s, a), dist in self.trans.items():
            if not dist:
                raise MdpError(f"empty distribution at {(s, a)!r}")
            total = 0.0
            for succ, p in dist.items():
                if succ not in seen:
                    raise MdpError(f"unknown successor {succ!r} at {(s, a)!r}")
                if p <= 0.0:
                    raise MdpError(f"nonpositive probability at {(s, a)!r}")
                total += p
            if abs(total - 1.0) > _PROB_TOL:
                raise MdpError(f"distribution at {(s, a)!r} sums to {total!r}")
        for a in self.actions_at[SINK]:
            if self.trans[(SINK, a)] != {SINK: 1.0}:
                raise MdpError("sink transitions must put mass 1 on the sink")
        self._check_sink_reachable()

    def _check_sink_reachable(self):
        # Backward BFS from the sink over positive-probability edges.
        incoming = {s: [] for s in self.states}
        for (s, _a), dist in self.trans.items():
            for succ in dist:
                incoming[succ].append(s)
        reached = {SINK}
        frontier = [SINK]
        while frontier:
            nxt = []
            for t in frontier:
                for s in incoming[t]:
                    if s not in reached:
                        reached.add(s)
                        nxt.append(s)
            frontier = nxt
        missing = [s for s in self.states if s not in reached]
        if missing:
            raise MdpError(f"sink unreachable from states: {missing[:5]!r}")

    # -- queries -------------------------------------------------------

    def actions(self, s) -> tuple:
        try:
            return self.actions_at[s]
        except KeyError:
            raise MdpError(f"unknown state {s!r}") from None

    def transition_dist(self, s, a) -> dict:
        """Successor distribution for action ``a`` at state ``s``."""
        if a not in self.actions(s):
            raise MdpError(f"action {a!r} not available at {s!r}")
        return dict(self.trans[(s, a)])

    def label_of(self, s):
        return self.label.get(s)

    def __repr__(self):
        return f"Mdp({len(self.states)} states, start={self.start!r})"


@dataclass(frozen=True)
class Path:
    """Alternating state/action sequence starting at the episode start.

    ``states`` has one more entry than ``actions`` for ordinary paths; a
    "dangling" path with equally many actions ends mid-transition (the
    environment has not yet resolved the last action).  Complete paths end
    at the sink, which appears exactly once.
    """

    states: tuple
    actions: tuple

    def __post_init__(self):
        if not self.states:
            raise MdpError("a path needs at least its start state")
        if len(self.actions) not in (len(self.states) - 1, len(self.states)):
            raise MdpError("path states/actions lengths are inconsistent")

    @property
    def ends_in_action(self) -> bool:
        return len(self.actions) == len(self.states)

    @property
    def complete(self) -> bool:
        return (
            not self.ends_in_action
            and self.states[-1] == SINK
            and self.states.count(SINK) == 1
        )

    @property
    def n_steps(self) -> int:
        return len(self.actions)

    def steps(self) -> Iterator[tuple]:
        """Yield (state, action, successor-or-None) triples."""
        for i, a in enumerate(self.actions):
            succ = self.states[i + 1] if i + 1 < len(self.states) else None
            yield self.states[i], a, succ

    def __len__(self):
        return len(self.actions)


@dataclass(frozen=True)
class PathReport:
    ok: bool
    index: int | None = None
    message: str = ""


def validate_path(m: Mdp, p: Path) -> PathReport:
    """Check a path against the dynamics; reports the first violating index."""
    if p.states[0] != m.start:
        return PathReport(False, 0, f"path starts at {p.states[0]!r}, not {m.start!r}")
    for i, s in enumerate(p.states):
        if s == SINK and i != len(p.states) - 1:
            return PathReport(False, i, "sink may only appear as the final state")
    for i, (s, a, succ) in enumerate(p.steps()):
        if s not in m.actions_at:
            return PathReport(False, i, f"unknown state {s!r}")
        if a not in m.actions_at[s]:
            return PathReport(False, i, f"action {a!r} unavailable at {s!r}")
        if succ is not None and m.trans[(s, a)].get(succ, 0.0) <= 0.0:
            return PathReport(False, i, f"zero-probability transition {s!r} -{a!r}-> {succ!r}")
    return PathReport(True)


def trace_of(m: Mdp, p: Path, include_start_label: bool = False) -> tuple:
    """Symbol sequence of the labeled states a path visits.

    The start state's label is skipped unless ``include_start_label`` is set
    (the start cell is uncolored context by default).  Unlabeled states, in
    particular the sink, contribute nothing.
    """
    first = 0 if include_start_label else 1
    out = []
    for s in p.states[first:]:
        sym = m.label.get(s)
        if sym is not None:
            out.append(sym)
    return tuple(out)


def path_dynamics_prob(m: Mdp, p: Path) -> float:
    """Product of environment transition probabilities along a path."""
    prob = 1.0
    for s, a, succ in p.steps():
        if succ is not None:
            prob *= m.trans[(s, a)].get(succ, 0.0)
    return prob


def enumerate_complete_paths(m: Mdp, max_len: int, cap: int = 100_000) -> list[Path]:
    """All complete paths with at most ``max_len`` transitions.

    Intended as a brute-force oracle on small models; refuses (raises
    :class:`EnumerationCapError`) rather than exploring more than ``cap``
    prefixes.
    """
    out = []
    visited = 0
    stack = [((m.start,), ())]
    while stack:
        states, actions = stack.pop()
        visited += 1
        if visited > cap:
            raise EnumerationCapError(f"more than {cap} prefixes explored")
        s = states[-1]
        if s == SINK:
            out.append(Path(states, actions))
            continue
        if len(actions) >= max_len:
            continue
        for a in reversed(m.actions_at[s]):
            for succ in reversed(list(m.trans[(s, a)])):
                stack.append((states + (succ,), actions + (a,)))
    return out


# -- gridworld builder -----------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """Description of a colored slippery grid.

    ``tiles`` holds one string per row (top row first) over the symbols
    ``r b y n _``.  ``start_cell`` is ``(x, y)`` with x the column and y the
    row.  After ``horizon`` steps every action leads to the sink.
    """

    width: int
    height: int
    tiles: tuple[str, ...]
    slip_prob: float
    start_cell: tuple[int, int]
    horizon: int


def _clamp(x: int, y: int, w: int, h: int) -> tuple[int, int]:
    return min(max(x, 0), w - 1), min(max(y, 0), h - 1)


def build_gridworld(spec: GridSpec) -> Mdp:
    """Build the time-indexed MDP of a grid.

    States are ``(x, y, t)`` triples plus the sink.  The intended move
    succeeds with probability ``1 - slip_prob``; otherwise the agent is
    pushed one cell down.  Moves into a wall (including the slip) leave the
    agent in place.  At ``t == horizon`` every action ends the episode.
    """
    w, h = spec.width, spec.height
    if w <= 0 or h <= 0:
        raise MdpError("grid dimensions must be positive")
    if len(spec.tiles) != h or any(len(row) != w for row in spec.tiles):
        raise MdpError("tile grid does not match the declared dimensions")
    for row in spec.tiles:
        for c in row:
            if c not in GRID_ALPHABET:
                raise MdpError(f"unknown tile symbol {c!r}")
    sx, sy = spec.start_cell
    if not (0 <= sx < w and 0 <= sy < h):
        raise MdpError(f"start cell {spec.start_cell!r} out of bounds")
    if not 0.0 <= spec.slip_prob <= 1.0:
        raise MdpError("slip probability must lie in [0, 1]")
    if spec.horizon < 1:
        raise MdpError("horizon must be positive")

    states = []
    actions_at = {}
    trans = {}
    label = {}
    for t in range(spec.horizon + 1):
        for y in range(h):
            for x in range(w):
                s = (x, y, t)
                states.append(s)
                actions_at[s] = GRID_ACTIONS
                label[s] = spec.tiles[y][x]
                for a in GRID_ACTIONS:
                    if t == spec.horizon:
                        trans[(s, a)] = {SINK: 1.0}
                        continue
                    dx, dy = _MOVES[a]
                    intended = _clamp(x + dx, y + dy, w, h)
                    slipped = _clamp(x, y + 1, w, h)
                    nt = t + 1
                    if spec.slip_prob == 0.0 or intended == slipped:
                        trans[(s, a)] = {intended + (nt,): 1.0}
                    elif spec.slip_prob == 1.0:
                        trans[(s, a)] = {slipped + (nt,): 1.0}
                    else:
                        trans[(s, a)] = {
                            intended + (nt,): 1.0 - spec.slip_prob,
                            slipped + (nt,): spec.slip_prob,
                        }
    states.append(SINK)
    actions_at[SINK] = ("stay",)
    trans[(SINK, "stay")] = {SINK: 1.0}
    return Mdp(states, actions_at, (sx, sy, 0), trans, label)


# -- text formats ------------------------------------------------------------
#
# Map file: optional `key=value` header lines (slip, start, horizon), then one
# line per grid row, one character per tile: r b y n and `.` (blank).  Demo
# file: one path per line as `x0,y0 a0 x1,y1 a1 ...` with actions U/D/L/R and
# an optional trailing `$`.  `#` starts a comment in both.


def parse_map(text: str) -> GridSpec:
    slip = 0.0
    start = (0, 0)
    horizon = 15
    rows = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line and not rows:
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key == "slip":
                slip = float(Fraction(value))
            elif key == "start":
                x, y = value.split(",")
                start = (int(x), int(y))
            elif key == "horizon":
                horizon = int(value)
            else:
                raise MdpError(f"unknown map header key {key!r}")
            continue
        try:
            rows.append("".join(_TILE_CHARS[c] for c in line))
        except KeyError as exc:
            raise MdpError(f"bad tile character in map row {line!r}") from exc
    if not rows:
        raise MdpError("map has no grid rows")
    return GridSpec(
        width=len(rows[0]),
        height=len(rows),
        tiles=tuple(rows),
        slip_prob=slip,
        start_cell=start,
        horizon=horizon,
    )


def load_map(path) -> GridSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_map(fh.read())


def parse_demo_line(line: str) -> Path:
    """Parse one `x,y a x,y a ... [$]` line; timesteps are positional."""
    tokens = line.split()
    states = []
    actions = []
    expect_cell = True
    for tok in tokens:
        if tok == SINK:
            states.append(SINK)
            expect_cell = True
            continue
        if expect_cell:
            try:
                x, y = tok.split(",")
                states.append((int(x), int(y), len(actions)))
            except ValueError as exc:
                raise MdpError(f"bad cell token {tok!r}") from exc
            expect_cell = False
        else:
            if tok not in _ACTION_CHARS:
                raise MdpError(f"bad action token {tok!r}")
            actions.append(_ACTION_CHARS[tok])
            expect_cell = True
    return Path(tuple(states), tuple(actions))


def parse_demos(text: str) -> list[Path]:
    demos = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            demos.append(parse_demo_line(line))
    return demos


def load_demos(path) -> list[Path]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_demos(fh.read())


def format_demo(p: Path) -> str:
    """Render a grid path back into the demo line format."""
    parts = []
    for i, s in enumerate(p.states):
        if s == SINK:
            parts.append(SINK)
        else:
            x, y, _t = s
            parts.append(f"{x},{y}")
        if i < len(p.actions):
            parts.append(_CHAR_ACTIONS[p.actions[i]])
    return " ".join(parts)
