"""Forward sampling of RDBN trajectories, noisy observations and the
line-based trajectory log.

Log records, one step per ``STEP`` header::

    STEP 0
    FACT +Color(P1,red)
    STEP 1 | ACTION Paint(P1,blue)
    FACT -Color(P1,red)
    FACT +Color(P1,blue)
    OBS Color(P1,blue)=1

Lines starting with ``#`` are comments; ``CONFIG key=value`` lines carry
generator parameters.  Only uncertain and persistent certain facts appear in
``FACT`` deltas; the action's event facts are implied by the header.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .model import Rdbn, carry_certain, sample_slice
from .relational import GroundPredicate, WorldState

__all__ = [
    "Trajectory", "observe_state", "observation_likelihood", "simulate",
    "format_fact", "parse_fact", "write_log", "read_log", "LogFormatError",
]


class LogFormatError(ValueError):
    pass


@dataclass
class Trajectory:
    """States ``0..T``, actions and observations ``1..T``.

    ``actions[k]`` is the list of event facts asserted at step ``k + 1``;
    ``labels[k]`` its printable name.
    """

    states: list
    actions: list
    observations: list
    labels: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.states) != len(self.actions) + 1 or len(self.actions) != len(self.observations):
            raise ValueError("trajectory lengths are inconsistent")
        if not self.labels:
            self.labels = [" ".join(format_fact(p, a) for p, a in act) or "-"
                           for act in self.actions]

    @property
    def length(self) -> int:
        return len(self.actions)


def format_fact(pred: str, args) -> str:
    return f"{pred}({','.join(args)})"


_FACT = re.compile(r"^\s*([A-Za-z_]\w*)\(([^()]*)\)\s*$")


def parse_fact(text: str) -> tuple[str, tuple[str, ...]]:
    m = _FACT.match(text)
    if not m:
        raise LogFormatError(f"malformed fact {text!r}")
    args = tuple(a.strip() for a in m.group(2).split(",")) if m.group(2).strip() else ()
    return m.group(1), args


def _acted_objects(action_facts) -> set[str]:
    return {a for _, args in action_facts for a in args}


def observe_state(model: Rdbn, state: WorldState, action_facts, p_o: float, rng):
    """Noisy reports of every uncertain grounding mentioning an acted-on constant.

    Functional predicates report one value per (predicate, object); with
    probability ``p_o`` a uniformly drawn wrong value.  Other groundings are
    reported as truth values flipped with probability ``p_o``.
    """
    vocab = model.vocabulary
    objs = _acted_objects(action_facts)
    out = []
    for pred in model.uncertain:
        sig = vocab.predicates[pred]
        if sig.functional:
            values = vocab.constants[sig.arg_types[1]]
            for obj in vocab.constants[sig.arg_types[0]]:
                if obj not in objs:
                    continue
                v = state.value(pred, obj)
                if v is None:
                    continue
                if rng.random() < p_o:
                    others = [w for w in values if w != v]
                    v = others[int(rng.integers(len(others)))]
                out.append((GroundPredicate(pred, (obj, v), state.time), True))
            continue
        for args in vocab.groundings(pred):
            if objs.isdisjoint(args):
                continue
            truth = state.holds(pred, args)
            out.append((GroundPredicate(pred, args, state.time), truth != (rng.random() < p_o)))
    return out


def observation_likelihood(model: Rdbn, state, observation, p_o: float) -> float:
    """P(observation | state) under the :func:`observe_state` noise model."""
    vocab = model.vocabulary
    lik = 1.0
    for g, value in observation:
        sig = vocab.predicates[g.pred]
        if sig.functional:
            k = len(vocab.constants[sig.arg_types[1]])
            lik *= (1.0 - p_o) if state.holds(g.pred, g.args) else p_o / (k - 1)
        else:
            lik *= (1.0 - p_o) if state.holds(g.pred, g.args) == value else p_o
    return lik


def simulate(model: Rdbn, plan: Sequence, rng, p_o: float = 0.0,
             initial: WorldState | None = None) -> Trajectory:
    """Sample states from the model and observations from :func:`observe_state`.

    ``plan`` items are lists of event facts ``(pred, args)`` or objects with
    an ``event_facts()`` method.  ``initial`` replaces the draw from the
    initial network when given.
    """
    state = initial if initial is not None else sample_slice(model, None, rng)
    states, actions, observations, labels = [state], [], [], []
    for step, action in enumerate(plan, start=1):
        facts = list(action.event_facts()) if hasattr(action, "event_facts") else list(action)
        certain = carry_certain(model, state, facts)
        state = sample_slice(model, state, rng, certain=certain, time=step)
        actions.append(facts)
        labels.append(str(action) if hasattr(action, "event_facts") else
                      " ".join(format_fact(p, a) for p, a in facts) or "-")
        observations.append(observe_state(model, state, facts, p_o, rng))
        states.append(state)
    return Trajectory(states, actions, observations, labels)


def write_log(traj: Trajectory, path, event_preds: Sequence[str] | None = None) -> None:
    """Write ``traj``; facts of ``event_preds`` (default: the vocabulary's
    event predicates) are omitted from the deltas."""
    if event_preds is None and isinstance(traj.states[0], WorldState):
        preds = traj.states[0].vocabulary.predicates
        event_preds = [p for p, sig in preds.items() if sig.event]
    hidden = set(event_preds or ())
    lines = ["# rdbn trajectory v1"]
    for k, v in traj.config.items():
        lines.append(f"CONFIG {k}={v}")
    prev: set = set()
    for t, state in enumerate(traj.states):
        cur = {f for f in state.facts if f[0] not in hidden}
        lines.append("STEP 0" if t == 0 else f"STEP {t} | ACTION {traj.labels[t - 1]}")
        for f in sorted(prev - cur):
            lines.append(f"FACT -{format_fact(*f)}")
        for f in sorted(cur - prev):
            lines.append(f"FACT +{format_fact(*f)}")
        if t > 0:
            for g, v in traj.observations[t - 1]:
                lines.append(f"OBS {format_fact(g.pred, g.args)}={int(v)}")
        prev = cur
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_log(path, vocabulary=None, action_parser=None) -> Trajectory:
    """Parse a log written by :func:`write_log`.

    States are rebuilt from the deltas.  ``action_parser`` maps an action label
    to its event facts; by default the label is read as space-separated facts.
    When ``vocabulary`` is None the states are returned as frozensets of facts.
    """
    config: dict = {}
    states, labels, observations = [], [], []
    cur: set = set()
    started = False

    def close():
        if started:
            states.append(frozenset(cur))

    for n, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            if line.startswith("CONFIG "):
                k, _, v = line[7:].partition("=")
                config[k.strip()] = v.strip()
            elif line.startswith("STEP "):
                close()
                started = True
                head, _, act = line.partition("|")
                step = int(head.split()[1])
                if step != len(states):
                    raise LogFormatError(f"expected step {len(states)}, found {step}")
                if step > 0:
                    act = act.strip()
                    if not act.startswith("ACTION "):
                        raise LogFormatError("missing ACTION")
                    labels.append(act[7:].strip())
                    observations.append([])
            elif line.startswith("FACT "):
                sign, fact = line[5], parse_fact(line[6:])
                if sign == "+":
                    cur.add(fact)
                elif sign in "-−":
                    cur.discard(fact)
                else:
                    raise LogFormatError("FACT needs + or -")
            elif line.startswith("OBS "):
                fact, _, v = line[4:].rpartition("=")
                pred, args = parse_fact(fact)
                observations[-1].append((GroundPredicate(pred, args, len(states)), v.strip() == "1"))
            else:
                raise LogFormatError(f"unknown record {line.split()[0]!r}")
        except (LogFormatError, ValueError, IndexError) as exc:
            raise LogFormatError(f"{path}:{n}: {exc}") from None
    close()
    if not states:
        raise LogFormatError(f"{path}: no steps")
    parse = action_parser or (lambda s: [parse_fact(x) for x in s.split() if x != "-"])
    actions = [parse(lbl) for lbl in labels]
    if vocabulary is not None:
        built = []
        for t, facts in enumerate(states):
            events = set(actions[t - 1]) if t > 0 else set()
            built.append(WorldState(vocabulary, t, set(facts) | events))
        states = built
    return Trajectory(states, actions, observations, labels, config)
