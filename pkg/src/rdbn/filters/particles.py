"""Bootstrap particle filter and exact filtering for generic RDBN models.

Identical particles are stored once with a multiplicity, which keeps runs
with 10^5 particles on small models cheap.  Propagation splits a group of
``k`` identical particles with binomial draws at every grounding, so each
particle still receives an independent sample of the next slice.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..model import Rdbn, _Scratch, carry_certain, eval_fopt, slice_outcomes, transition_groundings
from ..relational import GroundPredicate, WorldState
from ..simulation import observation_likelihood
from .resampling import DegenerateFilterError, systematic_indices

__all__ = ["ParticleSet", "pf_init", "pf_step", "pf_marginal", "exact_filter", "exact_marginal"]


@dataclass
class ParticleSet:
    """``states[j]`` stands for ``counts[j]`` identical particles."""

    states: list
    counts: np.ndarray
    events: list = field(default_factory=list)  # (step, note) of recoveries

    @property
    def size(self) -> int:
        return int(self.counts.sum())

    def expanded(self) -> list:
        return [s for s, k in zip(self.states, self.counts) for _ in range(int(k))]


def _split(model: Rdbn, prev, certain, time, count, rng, groundings=None):
    """Draw ``count`` independent slices given ``prev``; returns {facts: count}."""
    net = model.initial if prev is None else model.transition
    order = transition_groundings(model) if groundings is None else groundings
    vocab = model.vocabulary
    out: dict = {}
    stack = [(0, frozenset(certain), count)]
    while stack:
        i, facts, k = stack.pop()
        facts = set(facts)
        scratch = _Scratch(vocab, time, facts)
        while i < len(order):
            pred, args = order[i]
            p = eval_fopt(net[pred], args, scratch, prev)
            if p >= 1.0:
                facts.add((pred, args))
            elif p > 0.0:
                k1 = int(rng.binomial(k, p))
                if k1 == k:
                    facts.add((pred, args))
                elif k1 > 0:
                    stack.append((i + 1, frozenset(facts | {(pred, args)}), k1))
                    k -= k1
            i += 1
        key = frozenset(facts)
        out[key] = out.get(key, 0) + k
    return out


def _collect(groups: dict, vocab, time) -> ParticleSet:
    keys = sorted(groups, key=lambda f: sorted(f))
    return ParticleSet([WorldState(vocab, time, f) for f in keys],
                       np.array([groups[f] for f in keys], dtype=np.int64))


def pf_init(model: Rdbn, n: int, rng, initial: WorldState | None = None) -> ParticleSet:
    """``n`` particles drawn from the initial network, or copies of ``initial``."""
    if n < 1:
        raise ValueError("need at least one particle")
    if initial is not None:
        return ParticleSet([initial], np.array([n], dtype=np.int64))
    return _collect(_split(model, None, set(), 0, n, rng), model.vocabulary, 0)


def pf_step(particles: ParticleSet, model: Rdbn, action, observation, rng, p_o: float,
            step: int | None = None, recover: bool = False) -> ParticleSet:
    """Propagate, weight by the observation likelihood and resample systematically.

    ``action`` is a list of event facts.  With ``recover`` an all-zero weight
    vector is replaced by uniform weights and the event recorded instead of
    raising :class:`DegenerateFilterError`.
    """
    time = particles.states[0].time + 1 if step is None else step
    groups: dict = {}
    for state, k in zip(particles.states, particles.counts):
        certain = carry_certain(model, state, action)
        for facts, c in _split(model, state, certain, time, int(k), rng).items():
            groups[facts] = groups.get(facts, 0) + c
    prop = _collect(groups, model.vocabulary, time)
    lik = np.array([observation_likelihood(model, s, observation, p_o) for s in prop.states])
    owner = np.repeat(np.arange(len(prop.states)), prop.counts)
    w = lik[owner]
    events = list(particles.events)
    if w.sum() <= 0:
        if not recover:
            raise DegenerateFilterError(time)
        w = np.ones_like(w)
        events.append((time, "uniform reweighting after zero total weight"))
    idx = systematic_indices(w, rng)
    counts = np.bincount(owner[idx], minlength=len(prop.states))
    keep = counts > 0
    return ParticleSet([s for s, k in zip(prop.states, keep) if k], counts[keep], events)


def pf_marginal(particles: ParticleSet, g) -> float:
    """Fraction of particles in which ``g`` holds."""
    if particles.size == 0:
        raise ValueError("empty particle set")
    key = g.key if isinstance(g, GroundPredicate) else g
    hits = sum(int(k) for s, k in zip(particles.states, particles.counts) if key in s.facts)
    return hits / particles.size


def exact_filter(model: Rdbn, actions, observations, p_o: float,
                 initial: WorldState | None = None) -> list[dict]:
    """Exact beliefs ``{facts: prob}`` for steps ``0..T`` by joint enumeration."""
    if initial is not None:
        belief = {initial.facts: 1.0}
    else:
        belief = dict(_merge(slice_outcomes(model, None, set(), 0)))
    out = [belief]
    vocab = model.vocabulary
    for t, (action, obs) in enumerate(zip(actions, observations), start=1):
        nxt: dict = {}
        for facts, p in belief.items():
            prev = WorldState(vocab, t - 1, facts)
            for f, q in slice_outcomes(model, prev, carry_certain(model, prev, action), t):
                if q > 0:
                    nxt[f] = nxt.get(f, 0.0) + p * q
        for f in list(nxt):
            nxt[f] *= observation_likelihood(model, WorldState(vocab, t, f), obs, p_o)
        z = sum(nxt.values())
        if z <= 0:
            raise DegenerateFilterError(t, "observation sequence has zero probability")
        belief = {f: p / z for f, p in nxt.items() if p > 0}
        out.append(belief)
    return out


def _merge(pairs):
    acc: dict = {}
    for f, p in pairs:
        acc[f] = acc.get(f, 0.0) + p
    return acc.items()


def exact_marginal(belief: dict, g) -> float:
    key = g.key if isinstance(g, GroundPredicate) else g
    return sum(p for f, p in belief.items() if key in f)
