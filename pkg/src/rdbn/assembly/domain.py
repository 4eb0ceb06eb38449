"""Assembly domain: objects, attributes, actions, fault models, observations.

States are numpy arrays with a leading batch axis so that the same fault
code drives both the ground-truth simulator (batch of one) and particle
filters (batch of N):

* ``attrs``: ``(N, n_objects, n_attributes)`` int8 value indices, -1 where an
  attribute does not apply to the object's kind;
* ``rel``: ``(N, 2, n_objects, n_objects)`` bool, relation 0 = WeldedTo,
  relation 1 = BoltedTo, indexed ``[first, second]``.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..relational import GroundPredicate, PredicateSignature, Vocabulary, WorldState

__all__ = [
    "ATTRIBUTES", "APPLICABLE", "KINDS", "RELATIONS", "PROP_ACTIONS", "AssemblyConfig", "AssemblyDomain",
    "AssemblyState", "Action", "Observation", "generate_domain", "generate_plan",
    "apply_propositional_fault", "apply_relational_fault", "apply_action",
    "wrong_object_probs", "observe", "observation_loglik", "derive_rng",
    "relation_pair", "creation_probs",
]

ATTRIBUTES = ("Shape", "Surface", "Temperature", "Color", "Size", "Weight", "HoleType")
KINDS = ("plate", "bracket", "bolt")
APPLICABLE = {
    "plate": ("Shape", "Surface", "Temperature", "Color", "Size"),
    "bracket": ("Shape", "Surface", "Weight", "Color"),
    "bolt": ("HoleType", "Size", "Weight"),
}
RELATIONS = ("WeldedTo", "BoltedTo")
# action name -> attributes it may set
PROP_ACTIONS = {
    "Lathe": ("Shape", "Size"),
    "Paint": ("Color",),
    "Polish": ("Surface",),
    "Heat": ("Temperature",),
    "Punch": ("HoleType",),
}
# similarity attributes used when a relational action picks a wrong object
SIMILARITY = {
    ("Weld", "plate"): ("Color", "Shape"),
    ("Weld", "bracket"): ("Color", "Shape"),
    ("Bolt", "plate"): ("Color", "Surface"),
    ("Bolt", "bracket"): ("Color", "Surface"),
    ("Bolt", "bolt"): ("Size", "Size"),
}
CLASS_WEIGHTS = np.array([1 / 2, 1 / 8, 1 / 8, 1 / 32])
ATTACHED_WEIGHT = 1 / 2


def derive_rng(seed: int, *keys) -> np.random.Generator:
    """Independent stream for ``(seed, *keys)``; adding keys elsewhere does not
    perturb existing streams."""
    words = [int(k) if isinstance(k, (int, np.integer)) else zlib.crc32(str(k).encode())
             for k in keys]
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(words)))


@dataclass
class AssemblyConfig:
    n_plates: int = 4
    n_brackets: int = 3
    n_bolts: int = 3
    attribute_values: dict = field(default_factory=dict)
    n_values: int = 3
    fault_probability: float = 0.01
    observation_noise: Optional[float] = None
    kappa: int = 1
    plan_length: int = 20
    seed: int = 0
    relational_similarity: bool = False
    prop_fraction: float = 0.7

    def __post_init__(self):
        if not 0.0 <= self.fault_probability <= 1.0:
            raise ValueError("fault_probability must lie in [0, 1]")
        if self.observation_noise is not None and not 0.0 <= self.observation_noise <= 1.0:
            raise ValueError("observation_noise must lie in [0, 1]")
        if min(self.n_plates, self.n_brackets, self.n_bolts) < 1:
            raise ValueError("object counts must be at least 1")
        if self.kappa < 1:
            raise ValueError("kappa must be at least 1")
        if self.plan_length < 0:
            raise ValueError("plan_length must be non-negative")

    @property
    def p_o(self) -> float:
        return self.fault_probability if self.observation_noise is None else self.observation_noise

    def values(self, attribute: str) -> tuple[str, ...]:
        vals = self.attribute_values.get(attribute)
        if vals is None:
            vals = [f"{attribute.lower()}{k}" for k in range(self.n_values)]
        vals = tuple(vals)
        if len(vals) < 2:
            raise ValueError(f"{attribute}: at least two values are required")
        return vals


class AssemblyDomain:
    """Object inventory and index tables for one configuration."""

    def __init__(self, cfg: AssemblyConfig):
        self.cfg = cfg
        names, kinds = [], []
        for kind, count, prefix in (("plate", cfg.n_plates, "Plate"),
                                    ("bracket", cfg.n_brackets, "Bracket"),
                                    ("bolt", cfg.n_bolts, "Bolt")):
            for k in range(1, count + 1):
                names.append(f"{prefix}{k}")
                kinds.append(KINDS.index(kind))
        self.names = names
        self.index = {n: i for i, n in enumerate(names)}
        self.kind = np.array(kinds, dtype=np.int8)
        self.n = len(names)
        self.values = {a: cfg.values(a) for a in ATTRIBUTES}
        self.value_index = {a: {v: i for i, v in enumerate(vs)} for a, vs in self.values.items()}
        self.n_values = np.array([len(self.values[a]) for a in ATTRIBUTES])
        self.applicable = np.zeros((self.n, len(ATTRIBUTES)), dtype=bool)
        for i, k in enumerate(self.kind):
            for a in APPLICABLE[KINDS[k]]:
                self.applicable[i, ATTRIBUTES.index(a)] = True
        plate = self.kind == 0
        bracket = self.kind == 1
        bolt = self.kind == 2
        part = plate | bracket
        self.is_plate, self.is_bracket, self.is_bolt, self.is_part = plate, bracket, bolt, part
        welded = plate[:, None] & part[None, :]
        np.fill_diagonal(welded, False)
        bolted = part[:, None] & bolt[None, :]
        self.rel_valid = np.stack([welded, bolted])

    def attr(self, name: str) -> int:
        return ATTRIBUTES.index(name)

    @property
    def vocabulary(self) -> Vocabulary:
        constants = {"obj": self.names}
        for a in ATTRIBUTES:
            constants[a.lower()] = self.values[a]
        preds = [PredicateSignature(a, ("obj", a.lower()), functional=True) for a in ATTRIBUTES]
        preds += [PredicateSignature(r, ("obj", "obj"), kind="complex") for r in RELATIONS]
        return Vocabulary(constants, preds)

    def candidate_pairs(self, r: int) -> np.ndarray:
        """``(M, 2)`` array of valid (first, second) index pairs of relation ``r``."""
        return np.argwhere(self.rel_valid[r])


@dataclass
class AssemblyState:
    """Batched world state; see the module docstring for the layout."""

    attrs: np.ndarray
    rel: np.ndarray
    time: int = 0

    @property
    def size(self) -> int:
        return self.attrs.shape[0]

    def copy(self) -> "AssemblyState":
        return AssemblyState(self.attrs.copy(), self.rel.copy(), self.time)

    def take(self, idx) -> "AssemblyState":
        return AssemblyState(self.attrs[idx], self.rel[idx], self.time)

    def single(self, i: int = 0) -> "AssemblyState":
        return AssemblyState(self.attrs[i:i + 1].copy(), self.rel[i:i + 1].copy(), self.time)

    def to_world_state(self, domain: AssemblyDomain, i: int = 0) -> WorldState:
        facts = []
        attrs = self.attrs[i]
        for o, a in zip(*np.nonzero(attrs >= 0)):
            attr = ATTRIBUTES[a]
            facts.append((attr, (domain.names[o], domain.values[attr][attrs[o, a]])))
        for r, x, y in zip(*np.nonzero(self.rel[i])):
            facts.append((RELATIONS[r], (domain.names[x], domain.names[y])))
        return WorldState(domain.vocabulary, self.time, facts)

    @classmethod
    def from_world_state(cls, domain: AssemblyDomain, state: WorldState) -> "AssemblyState":
        attrs = np.full((1, domain.n, len(ATTRIBUTES)), -1, dtype=np.int8)
        rel = np.zeros((1, 2, domain.n, domain.n), dtype=bool)
        for pred, args in state.facts:
            if pred in ATTRIBUTES:
                attrs[0, domain.index[args[0]], ATTRIBUTES.index(pred)] = \
                    domain.value_index[pred][args[1]]
            elif pred in RELATIONS:
                rel[0, RELATIONS.index(pred), domain.index[args[0]], domain.index[args[1]]] = True
        return cls(attrs, rel, state.time)


@dataclass(frozen=True)
class Action:
    """One plan step.

    Propositional: ``op`` in Lathe/Paint/Polish/Heat/Punch with
    ``args = (object, attribute, value)``.  Relational: ``Weld(plate, part)``
    or ``Bolt(bolt, part)`` with ``args = (first, second)``.
    """

    op: str
    args: tuple
    time: int = 0

    @property
    def relational(self) -> bool:
        return self.op in ("Weld", "Bolt")

    @property
    def objects(self) -> tuple[str, ...]:
        return self.args if self.relational else self.args[:1]

    def __str__(self):
        return f"{self.op}({','.join(self.args)})"

    @classmethod
    def parse(cls, text: str, time: int = 0) -> "Action":
        op, _, rest = text.strip().partition("(")
        return cls(op, tuple(a.strip() for a in rest.rstrip(")").split(",")), time)

    def event_facts(self) -> list[tuple[str, tuple]]:
        """The action as certain event facts of the declarative model."""
        if self.op == "Weld":
            return [("Weld", self.args)]
        if self.op == "Bolt":
            return [("BoltAct", self.args)]
        name = {"Shape": "LatheShape", "Size": "LatheSize"}.get(self.args[1], self.op)
        return [(name, (self.args[0], self.args[2]))]


def relation_pair(domain: AssemblyDomain, action: Action):
    """Relation index and intended (first, second) pair for a relational action."""
    a, b = domain.index[action.args[0]], domain.index[action.args[1]]
    if action.op == "Weld":
        return 0, a, b
    return 1, b, a  # Bolt(bolt, part) creates BoltedTo(part, bolt)


@dataclass
class Observation:
    """Reported facts for one step.

    ``attr_obs`` rows are ``(object, attribute, reported value)``; ``rel_obs``
    rows are ``(relation, first, second, reported truth)``.
    """

    time: int
    attr_obs: np.ndarray
    rel_obs: np.ndarray

    def facts(self, domain: AssemblyDomain) -> list[tuple[GroundPredicate, bool]]:
        out = []
        for o, a, v in self.attr_obs:
            attr = ATTRIBUTES[a]
            out.append((GroundPredicate(attr, (domain.names[o], domain.values[attr][v]), self.time), True))
        for r, x, y, v in self.rel_obs:
            out.append((GroundPredicate(RELATIONS[r], (domain.names[x], domain.names[y]), self.time), bool(v)))
        return out


def generate_domain(cfg: AssemblyConfig, rng) -> tuple[AssemblyDomain, AssemblyState]:
    """Objects with uniformly drawn attribute values and no relations."""
    domain = AssemblyDomain(cfg)
    attrs = np.full((1, domain.n, len(ATTRIBUTES)), -1, dtype=np.int8)
    for a in range(len(ATTRIBUTES)):
        rows = np.nonzero(domain.applicable[:, a])[0]
        attrs[0, rows, a] = rng.integers(0, domain.n_values[a], size=rows.size)
    rel = np.zeros((1, 2, domain.n, domain.n), dtype=bool)
    return domain, AssemblyState(attrs, rel, 0)


def generate_plan(cfg: AssemblyConfig, rng, domain: AssemblyDomain | None = None) -> list[Action]:
    """Round-robin plan mixing propositional and relational actions.

    Relational steps pick partners that keep every object's degree in each
    relation (either argument position) within ``kappa`` under fault-free
    execution; when no
    such partner exists the step falls back to a propositional action.
    """
    domain = domain or AssemblyDomain(cfg)
    used = np.zeros((2, domain.n), dtype=int)  # relation degree per object
    plan = []
    for t in range(1, cfg.plan_length + 1):
        o = (t - 1) % domain.n
        action = None
        if rng.random() >= cfg.prop_fraction:
            action = _relational_step(domain, o, used, cfg.kappa, rng, t)
        if action is None:
            kind = KINDS[domain.kind[o]]
            choices = [(op, attr) for op, attrs in PROP_ACTIONS.items()
                       for attr in attrs if attr in APPLICABLE[kind]]
            op, attr = choices[rng.integers(len(choices))]
            value = domain.values[attr][rng.integers(domain.n_values[domain.attr(attr)])]
            action = Action(op, (domain.names[o], attr, value), t)
        plan.append(action)
    return plan


def _relational_step(domain, o, used, kappa, rng, t):
    options = []
    for r in (0, 1):
        valid = domain.rel_valid[r]
        free = used[r] < kappa
        if not free[o]:
            continue
        for y in np.nonzero(valid[o] & free)[0]:
            options.append((r, o, y))
        for x in np.nonzero(valid[:, o] & free)[0]:
            options.append((r, x, o))
    if not options:
        return None
    r, x, y = options[rng.integers(len(options))]
    used[r, x] += 1
    used[r, y] += 1
    if r == 0:
        return Action("Weld", (domain.names[x], domain.names[y]), t)
    return Action("Bolt", (domain.names[y], domain.names[x]), t)


# -- fault models ---------------------------------------------------------

def apply_propositional_fault(domain, state: AssemblyState, action: Action, p_f: float, rng,
                              return_branch: bool = False):
    """Intended value w.p. 1-p_f, unchanged w.p. p_f/2, a uniformly drawn
    other value w.p. p_f/2.  Returns a new state (and the branch taken:
    0 intended, 1 unchanged, 2 wrong value)."""
    o = domain.index[action.args[0]]
    a = domain.attr(action.args[1])
    v = domain.value_index[action.args[1]][action.args[2]]
    n = state.size
    u = rng.random(n)
    branch = np.where(u < 1.0 - p_f, 0, np.where(u < 1.0 - p_f / 2.0, 1, 2))
    wrong = rng.integers(0, domain.n_values[a] - 1, size=n)
    wrong = wrong + (wrong >= v)
    out = state.copy()
    col = out.attrs[:, o, a]
    col[branch == 0] = v
    col[branch == 2] = wrong[branch == 2]
    out.attrs[:, o, a] = col
    out.time = action.time
    return (out, branch) if return_branch else out


def _similarity_axes(domain, op, obj):
    a1, a2 = SIMILARITY[(op, KINDS[domain.kind[obj]])]
    return domain.attr(a1), domain.attr(a2)


def wrong_object_probs(domain, state: AssemblyState, action: Action, which: int,
                       relational_similarity: bool = False) -> np.ndarray:
    """``(N, n)`` distribution of the replacement for action argument ``which``
    (1 or 2).  Candidates exclude both intended objects; empty similarity
    classes are dropped and the remaining class weights renormalised."""
    i1, i2 = domain.index[action.args[0]], domain.index[action.args[1]]
    target = i1 if which == 1 else i2
    if action.op == "Weld":
        cand = domain.is_plate.copy() if which == 1 else domain.is_part.copy()
    else:
        cand = domain.is_bolt.copy() if which == 1 else domain.is_part.copy()
    cand[[i1, i2]] = False
    ax1, ax2 = _similarity_axes(domain, action.op, target)
    attrs = state.attrs
    same1 = attrs[:, :, ax1] == attrs[:, target, ax1][:, None]
    same2 = attrs[:, :, ax2] == attrs[:, target, ax2][:, None]
    masks = [cand & same1 & same2, cand & same1, cand & same2,
             np.broadcast_to(cand, same1.shape)]
    weights = list(CLASS_WEIGHTS)
    if relational_similarity:
        r, x, y = relation_pair(domain, action)
        # objects sharing a partner with the intended one in the same position
        rel = state.rel[:, r].astype(np.float32)
        if (which == 1) == (action.op == "Weld"):
            pos_target = x if which == 1 else y
            shared = np.einsum("nj,nij->ni", rel[:, pos_target, :], rel) > 0
        else:
            pos_target = y if which == 2 else x
            shared = np.einsum("nj,nji->ni", rel[:, :, pos_target], rel) > 0
        masks.append(cand & shared)
        weights.append(ATTACHED_WEIGHT)
    probs = np.zeros(same1.shape)
    total = np.zeros(state.size)
    for m, w in zip(masks, weights):
        size = m.sum(axis=1)
        nonempty = size > 0
        probs += np.where(nonempty[:, None], w * m / np.maximum(size, 1)[:, None], 0.0)
        total += w * nonempty
    return np.divide(probs, total[:, None], out=np.zeros_like(probs), where=total[:, None] > 0)


def _draw(probs: np.ndarray, rng) -> np.ndarray:
    """One index per row of ``probs``; -1 for rows with no mass."""
    cum = probs.cumsum(axis=1)
    u = rng.random(probs.shape[0]) * cum[:, -1]
    idx = (cum <= u[:, None]).sum(axis=1)
    idx = np.minimum(idx, probs.shape[1] - 1)
    return np.where(cum[:, -1] > 0, idx, -1)


REL_BRANCH_CUM = np.array([0.05, 0.45, 0.45, 0.05])


def apply_relational_fault(domain, state: AssemblyState, action: Action, p_f: float, rng,
                           kappa: int | None = None, relational_similarity: bool = False,
                           return_branch: bool = False):
    """Weld/Bolt fault model.

    Branches: 0 intended (1-p_f), 1 unchanged (0.05 p_f), 2 wrong first
    object (0.45 p_f), 3 wrong second object (0.45 p_f), 4 both wrong
    (0.05 p_f).  The two wrong objects of branch 4 are drawn independently.
    With ``kappa`` set, a relation is not created when its first argument
    already has ``kappa`` partners.
    """
    kappa = domain.cfg.kappa if kappa is None else kappa
    n = state.size
    u = rng.random(n)
    edges = np.concatenate([[1.0 - p_f], 1.0 - p_f + p_f * np.cumsum(REL_BRANCH_CUM)])
    branch = np.minimum((u[:, None] >= edges[None, :]).sum(axis=1), 4)
    i1, i2 = domain.index[action.args[0]], domain.index[action.args[1]]
    o1 = np.full(n, i1)
    o2 = np.full(n, i2)
    need1 = (branch == 2) | (branch == 4)
    need2 = (branch == 3) | (branch == 4)
    ok = branch != 1
    if need1.any():
        pick = _draw(wrong_object_probs(domain, state.take(need1), action, 1, relational_similarity), rng)
        o1[need1] = pick
    if need2.any():
        pick = _draw(wrong_object_probs(domain, state.take(need2), action, 2, relational_similarity), rng)
        o2[need2] = pick
    ok &= (o1 >= 0) & (o2 >= 0) & (o1 != o2)
    r = 0 if action.op == "Weld" else 1
    x, y = (o1, o2) if r == 0 else (o2, o1)
    out = state.copy()
    rows = np.nonzero(ok)[0]
    if rows.size:
        full = out.rel[rows, r, x[rows], :].sum(axis=1) >= kappa
        already = out.rel[rows, r, x[rows], y[rows]]
        rows = rows[~full | already]
        out.rel[rows, r, x[rows], y[rows]] = True
    out.time = action.time
    return (out, branch) if return_branch else out


def apply_action(domain, state: AssemblyState, action: Action, p_f: float, rng,
                 kappa: int | None = None, relational_similarity: bool = False) -> AssemblyState:
    if action.relational:
        return apply_relational_fault(domain, state, action, p_f, rng, kappa, relational_similarity)
    return apply_propositional_fault(domain, state, action, p_f, rng)


def creation_probs(domain, state: AssemblyState, action: Action, p_f: float,
                   relational_similarity: bool = False) -> tuple[int, np.ndarray]:
    """Per-particle probability that each pair of the action's relation is newly
    created, before the kappa guard: ``(relation, (N, n, n) array)``."""
    r, x0, y0 = relation_pair(domain, action)
    n = state.size
    pi1 = wrong_object_probs(domain, state, action, 1, relational_similarity)
    pi2 = wrong_object_probs(domain, state, action, 2, relational_similarity)
    q = np.zeros((n, domain.n, domain.n))
    # action argument space: first arg index a, second b
    a0, b0 = domain.index[action.args[0]], domain.index[action.args[1]]
    qa = np.zeros((n, domain.n, domain.n))
    qa[:, a0, b0] += 1.0 - p_f
    qa[:, :, b0] += 0.45 * p_f * pi1
    qa[:, a0, :] += 0.45 * p_f * pi2
    qa += 0.05 * p_f * pi1[:, :, None] * pi2[:, None, :]
    idx = np.arange(domain.n)
    qa[:, idx, idx] = 0.0
    q = qa if r == 0 else qa.transpose(0, 2, 1)
    return r, q


# -- observations -----------------------------------------------------------

def observe(domain, state: AssemblyState, action: Action, p_o: float, rng) -> Observation:
    """Report every ground predicate involving the acted-on objects.

    Attribute reports name one value: the true one w.p. ``1 - p_o``, else a
    uniformly drawn wrong one.  Relation reports flip w.p. ``p_o``.
    """
    objs = [domain.index[o] for o in action.objects]
    attrs = state.attrs[0]
    rows = []
    for o in objs:
        for a in np.nonzero(domain.applicable[o])[0]:
            v = attrs[o, a]
            if rng.random() < p_o:
                w = rng.integers(0, domain.n_values[a] - 1)
                v = w + (w >= v)
            rows.append((o, a, v))
    rel_rows = []
    for r in range(2):
        valid = domain.rel_valid[r]
        seen = set()
        for o in objs:
            for y in np.nonzero(valid[o])[0]:
                seen.add((o, y))
            for x in np.nonzero(valid[:, o])[0]:
                seen.add((x, o))
        for x, y in sorted(seen):
            truth = bool(state.rel[0, r, x, y])
            rel_rows.append((r, x, y, truth != (rng.random() < p_o)))
    return Observation(action.time, np.array(rows, dtype=np.int64).reshape(-1, 3),
                       np.array(rel_rows, dtype=np.int64).reshape(-1, 4))


def observation_loglik(domain, state: AssemblyState, obs: Observation, p_o: float) -> np.ndarray:
    """``(N,)`` log P(obs | particle)."""
    with np.errstate(divide="ignore"):
        ll = np.zeros(state.size)
        if len(obs.attr_obs):
            o, a, v = obs.attr_obs.T
            match = state.attrs[:, o, a] == v[None, :]
            k = domain.n_values[a]
            ll += np.where(match, np.log1p(-p_o), np.log(p_o / (k - 1))[None, :]).sum(axis=1)
        if len(obs.rel_obs):
            r, x, y, v = obs.rel_obs.T
            match = state.rel[:, r, x, y] == v.astype(bool)[None, :]
            ll += np.where(match, np.log1p(-p_o), np.log(p_o)).sum(axis=1)
    return ll
