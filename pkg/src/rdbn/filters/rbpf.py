"""Rao-Blackwellised particle filter for generic RDBN models.

Simple predicates are sampled; every uncertain complex predicate ``R`` keeps,
per particle and per anchor object ``x`` (first argument), an exact
distribution over the set of partners ``{y : R(x, y)}``.  This is valid when

* no uncertain complex predicate is a parent of another predicate, and
* the tree of ``R(x, y)`` reads ``R`` only at the query's own anchor ``x``,

so that, given the simple predicates, the blocks of different anchors are
independent.  The partner-set size is bounded by the model itself (``kappa``
in the assembly domain); cells are enumerated exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from ..logic import Var, atoms
from ..model import (Diagnostic, Interior, Rdbn, _expr_formulas, _Scratch, carry_certain,
                     eval_fopt)
from ..relational import GroundPredicate, WorldState
from ..simulation import observation_likelihood
from .resampling import DegenerateFilterError, systematic_indices

__all__ = [
    "RbpfAssumptionError", "rbpf_violations", "MultinomialBlock", "RbpfParticle", "rbpf_init",
    "rbpf_step", "rbpf_marginal", "CompactCell", "rbpf_compact", "expand_compact",
]


class RbpfAssumptionError(ValueError):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(d.message for d in self.diagnostics))


def _tree_atoms(node):
    if isinstance(node, Interior):
        yield from atoms(node.formula)
        yield from _tree_atoms(node.if_true)
        yield from _tree_atoms(node.if_false)
    else:
        for _, f in _expr_formulas(node.expr):
            yield from atoms(f)


def rbpf_violations(model: Rdbn) -> list[Diagnostic]:
    """Reasons the per-anchor factorisation does not hold (empty when it does)."""
    diags = []
    complex_ = set(model.complex_predicates())
    for net_name, net in (("initial", model.initial), ("transition", model.transition)):
        for pred, pm in net.items():
            anchor = Var(pm.params[0])
            for a in _tree_atoms(pm.fopt.root):
                if a.pred not in complex_:
                    continue
                if pred != a.pred:
                    diags.append(Diagnostic(
                        f"{net_name} {pred}: uncertain complex predicate {a.pred} is a parent "
                        f"(edge {a.pred} -> {pred})"))
                elif pred in complex_ and a.terms[0] != anchor:
                    diags.append(Diagnostic(
                        f"{net_name} {pred}: reads {pred} at another anchor ({a.terms[0]})"))
    seen, out = set(), []
    for d in diags:
        if d.message not in seen:
            seen.add(d.message)
            out.append(d)
    return out


@dataclass
class MultinomialBlock:
    """Distribution over partner sets of one anchor."""

    predicate: str
    anchor: str
    cells: tuple          # tuple of frozensets of partners
    probs: np.ndarray

    def marginal(self, partner: str) -> float:
        return float(sum(p for c, p in zip(self.cells, self.probs) if partner in c))


@dataclass
class RbpfParticle:
    simple: WorldState               # certain + simple uncertain facts
    blocks: dict                     # (pred, anchor) -> MultinomialBlock


def _anchor_groundings(model: Rdbn, pred: str):
    """anchor -> ordered list of argument tuples."""
    out: dict = {}
    for args in model.vocabulary.groundings(pred):
        out.setdefault(args[0], []).append(args)
    return out


def _block_outcomes(model, net, pred, groundings, state_facts, prev, time):
    """Exact distribution over the anchor's partner sets: [(frozenset, prob)]."""
    vocab = model.vocabulary
    pm = net[pred]
    out: dict = {}

    def walk(i, facts, chosen, prob):
        scratch = _Scratch(vocab, time, facts)
        while i < len(groundings):
            args = groundings[i]
            p = eval_fopt(pm, args, scratch, prev)
            if 0.0 < p < 1.0:
                walk(i + 1, facts | {(pred, args)}, chosen | {args[1:]}, prob * p)
                prob *= 1.0 - p
            elif p >= 1.0:
                facts = facts | {(pred, args)}
                chosen = chosen | {args[1:]}
                scratch = _Scratch(vocab, time, facts)
            i += 1
        out[chosen] = out.get(chosen, 0.0) + prob

    walk(0, frozenset(state_facts), frozenset(), 1.0)
    return out


def _simple_groundings(model):
    preds = model.vocabulary.predicates
    return [(p, a) for p in model.uncertain if preds[p].kind == "simple"
            for a in model.vocabulary.groundings(p)]


def _sample_simple(model, prev, certain, time, rng):
    net = model.initial if prev is None else model.transition
    facts = set(certain)
    scratch = _Scratch(model.vocabulary, time, facts)
    for pred, args in _simple_groundings(model):
        p = eval_fopt(net[pred], args, scratch, prev)
        if p > 0.0 and (p >= 1.0 or rng.random() < p):
            facts.add((pred, args))
    return WorldState(model.vocabulary, time, facts)


def _with_partners(state: WorldState, pred, anchor, cell) -> WorldState:
    if not cell:
        return state
    return WorldState(state.vocabulary, state.time,
                      state.facts | {(pred, (anchor,) + c) for c in cell})


def rbpf_init(model: Rdbn, n: int, rng, initial: WorldState | None = None) -> list[RbpfParticle]:
    viol = rbpf_violations(model)
    if viol:
        raise RbpfAssumptionError(viol)
    complex_ = model.complex_predicates()
    particles = []
    for _ in range(n):
        if initial is not None:
            simple = WorldState(model.vocabulary, 0,
                                {f for f in initial.facts if f[0] not in complex_})
        else:
            simple = _sample_simple(model, None, set(), 0, rng)
        blocks = {}
        for pred in complex_:
            for anchor, gr in _anchor_groundings(model, pred).items():
                if initial is not None:
                    cell = frozenset(a[1:] for p, a in initial.facts if p == pred and a[0] == anchor)
                    dist = {cell: 1.0}
                else:
                    dist = _block_outcomes(model, model.initial, pred, gr, simple.facts, None, 0)
                blocks[(pred, anchor)] = _make_block(pred, anchor, dist)
        particles.append(RbpfParticle(simple, blocks))
    return particles


def _make_block(pred, anchor, dist: dict) -> MultinomialBlock:
    cells = sorted((c for c, p in dist.items() if p > 0), key=lambda c: sorted(c))
    probs = np.array([dist[c] for c in cells])
    total = probs.sum()
    if total <= 0:
        raise DegenerateFilterError(message=f"block {pred}({anchor}) has no mass")
    return MultinomialBlock(pred, anchor, tuple(cells), probs / total)


def rbpf_step(particles: list[RbpfParticle], model: Rdbn, action, observation, rng, p_o: float,
              step: int | None = None) -> list[RbpfParticle]:
    """One filtering step; ``action`` is a list of event facts."""
    complex_ = set(model.complex_predicates())
    time = particles[0].simple.time + 1 if step is None else step
    simple_obs = [(g, v) for g, v in observation if g.pred not in complex_]
    complex_obs: dict = {}
    for g, v in observation:
        if g.pred in complex_:
            complex_obs.setdefault((g.pred, g.args[0]), []).append((g.args[1:], v))
    groundings = {p: _anchor_groundings(model, p) for p in complex_}
    new_particles, weights = [], []
    for part in particles:
        certain = carry_certain(model, part.simple, action)
        simple = _sample_simple(model, part.simple, certain, time, rng)
        w = observation_likelihood(model, simple, simple_obs, p_o)
        blocks = {}
        for (pred, anchor), block in part.blocks.items():
            dist: dict = {}
            for cell, pc in zip(block.cells, block.probs):
                prev = _with_partners(part.simple, pred, anchor, cell)
                for c, q in _block_outcomes(model, model.transition, pred,
                                            groundings[pred][anchor], simple.facts, prev,
                                            time).items():
                    dist[c] = dist.get(c, 0.0) + pc * q
            obs = complex_obs.get((pred, anchor))
            if obs:
                lik = {c: np.prod([(1 - p_o) if ((rest in c) == v) else p_o for rest, v in obs])
                       for c in dist}
                evidence = sum(dist[c] * lik[c] for c in dist)
                w *= evidence
                if evidence <= 0:
                    dist = {c: 1.0 for c in dist}
                else:
                    dist = {c: dist[c] * lik[c] / evidence for c in dist}
            blocks[(pred, anchor)] = _make_block(pred, anchor, dist)
        new_particles.append(RbpfParticle(simple, blocks))
        weights.append(w)
    weights = np.array(weights)
    if weights.sum() <= 0:
        raise DegenerateFilterError(time)
    idx = systematic_indices(weights, rng)
    return [new_particles[i] for i in idx]


def rbpf_marginal(particles: list[RbpfParticle], g: GroundPredicate) -> float:
    if not particles:
        raise ValueError("empty particle set")
    key = (g.pred, g.args[0])
    if key in particles[0].blocks:
        return float(np.mean([p.blocks[key].marginal(g.args[1:]) for p in particles]))
    return float(np.mean([p.simple.holds(g.pred, g.args) for p in particles]))


# -- compaction ----------------------------------------------------------------

@dataclass(frozen=True)
class CompactCell:
    """All partner sets whose members fall into ``key`` (a sorted tuple of
    partner classes); each member set carries ``prob / count``."""

    key: tuple
    prob: float
    count: int


def _class_key(cell, class_of) -> tuple:
    return tuple(sorted(class_of[c] for c in cell))


def rbpf_compact(cells, probs, class_of: dict, candidates, kappa: int,
                 tol: float = 1e-12) -> list[CompactCell]:
    """Group a block by partner classes.

    ``cells`` are partner sets (frozensets of single partners), ``class_of``
    maps a partner to its attribute-value class.  Every set of at most
    ``kappa`` candidates is a potential member; sets missing from ``cells``
    have probability 0.  Raises ValueError when the probability is not
    uniform within a class.
    """
    given = {frozenset(c): float(p) for c, p in zip(cells, probs)}
    groups: dict = {}
    for k in range(kappa + 1):
        for combo in combinations(candidates, k):
            s = frozenset(combo)
            groups.setdefault(_class_key(s, class_of), []).append(given.get(s, 0.0))
    unknown = set(given) - {frozenset(c) for k in range(kappa + 1)
                            for c in combinations(candidates, k)}
    if unknown:
        raise ValueError("block contains sets outside the candidate space")
    out = []
    for key in sorted(groups):
        vals = groups[key]
        if max(vals) - min(vals) > tol * max(1.0, max(vals)):
            raise ValueError(f"class {key} has non-uniform probabilities")
        total = float(sum(vals))
        if total > 0:
            out.append(CompactCell(key, total, len(vals)))
    return out


def expand_compact(compact: list[CompactCell], class_of: dict, candidates, kappa: int) -> dict:
    """Inverse of :func:`rbpf_compact`: ``{partner set: prob}`` for nonzero sets."""
    by_key = {c.key: c for c in compact}
    out = {}
    for k in range(kappa + 1):
        for combo in combinations(candidates, k):
            s = frozenset(combo)
            cell = by_key.get(_class_key(s, class_of))
            if cell is not None:
                out[s] = cell.prob / cell.count
    return out
