"""Vectorised filters for the assembly domain.

All filters share one interface: :meth:`reset` with the known initial state,
:meth:`step` with an action and its observation, then queries of the true
state's probability, either per variable (:meth:`log_marginals`) or for the
joint state of the relations (:meth:`log_joint`).

Variables are the applicable attributes of every object followed by every
type-correct pair of each relation, in that order.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from ..assembly.domain import (ATTRIBUTES, Action, AssemblyDomain, AssemblyState, Observation,
                               apply_action, apply_propositional_fault, creation_probs,
                               observation_loglik, relation_pair)
from .resampling import DegenerateFilterError, systematic_indices
from .rkde import KernelParams, default_p_s, log_kernel
from .smoothing import IndicatorTable, SmoothingWeights, aspf_probs

__all__ = ["AssemblyPF", "AssemblySPF", "AssemblyASPF", "AssemblyRKDE", "AssemblyRBPF",
           "AssemblyRBPFSets", "AssemblyMultiPF", "FILTERS", "make_filter", "variable_count"]

COLOR = ATTRIBUTES.index("Color")
SIZE = ATTRIBUTES.index("Size")


def variable_count(domain: AssemblyDomain) -> int:
    return int(domain.applicable.sum() + domain.rel_valid.sum())


def _log(p):
    with np.errstate(divide="ignore"):
        return np.log(np.clip(p, 0.0, 1.0))


class _Filter:
    """Shared plumbing: attribute particles, resampling, variable queries."""

    name = "base"

    def __init__(self, domain: AssemblyDomain, n_particles: int, p_f: float, p_o: float, rng,
                 kappa: int | None = None, relational_similarity: bool = False,
                 recover: bool = True):
        if n_particles < 1:
            raise ValueError("need at least one particle")
        self.domain = domain
        self.n = n_particles
        self.p_f, self.p_o = p_f, p_o
        self.rng = rng
        self.kappa = domain.cfg.kappa if kappa is None else kappa
        self.relational_similarity = relational_similarity
        self.recover = recover
        self.events: list = []
        self.pairs = [domain.candidate_pairs(r) for r in (0, 1)]

    def _resample(self, logw: np.ndarray, step: int) -> np.ndarray:
        if not np.isfinite(logw).any():
            if not self.recover:
                raise DegenerateFilterError(step)
            self.events.append((step, "uniform reweighting after zero total weight"))
            logw = np.zeros_like(logw)
        w = np.exp(logw - logw[np.isfinite(logw)].max())
        return systematic_indices(w, self.rng)

    def attr_probs(self, truth: AssemblyState) -> np.ndarray:
        """P(attribute has its true value), applicable entries only."""
        hit = (self.attrs == truth.attrs[0][None]).mean(axis=0)
        return hit[self.domain.applicable]

    def relation_probs(self) -> np.ndarray:
        """(2, n, n) probability that each pair holds."""
        raise NotImplementedError

    def log_marginals(self, truth: AssemblyState, probs: np.ndarray | None = None) -> np.ndarray:
        p = self.relation_probs() if probs is None else probs
        rel = truth.rel[0]
        pr = [np.where(rel[r][tuple(self.pairs[r].T)], p[r][tuple(self.pairs[r].T)],
                       1.0 - p[r][tuple(self.pairs[r].T)]) for r in (0, 1)]
        return _log(np.concatenate([self.attr_probs(truth)] + pr))

    def log_joint(self, truth: AssemblyState) -> float:
        raise NotImplementedError


# -- particle filter family -------------------------------------------------------------

class AssemblyPF(_Filter):
    """Bootstrap particle filter over full states."""

    name = "pf"

    def reset(self, initial: AssemblyState):
        self.state = AssemblyState(np.repeat(initial.attrs[:1], self.n, axis=0),
                                   np.repeat(initial.rel[:1], self.n, axis=0), initial.time)
        self.prev = self.state
        self.action = None
        self.obs = None
        self.events = []
        self._memo = {}

    @property
    def attrs(self):
        return self.state.attrs

    def step(self, action: Action, obs: Observation):
        new = apply_action(self.domain, self.state, action, self.p_f, self.rng, self.kappa,
                           self.relational_similarity)
        logw = observation_loglik(self.domain, new, obs, self.p_o)
        idx = self._resample(logw, action.time)
        self.prev = self.state.take(idx)
        self.state = new.take(idx)
        self.action, self.obs = action, obs
        self._memo = {}     # per-step cache of derived estimates

    def relation_probs(self) -> np.ndarray:
        return self.state.rel.mean(axis=0)

    def log_joint(self, truth: AssemblyState) -> float:
        valid = self.domain.rel_valid
        same = (self.state.rel[:, valid] == truth.rel[0][valid][None]).all(axis=1)
        return float(_log(same.mean()))


class AssemblySPF(AssemblyPF):
    """Particle filter whose relation marginals mix the particle frequency,
    the per-particle fraction of true pairs and the Markov-blanket probability."""

    name = "spf"

    def __init__(self, *args, weights: SmoothingWeights = SmoothingWeights(), **kw):
        super().__init__(*args, **kw)
        self.weights = weights

    def blanket_probs(self, r: int) -> np.ndarray:
        """(N, n, n) probability of each pair given the particle's previous
        state, the action and the pair's observation."""
        prev = self.prev
        p = prev.rel[:, r].astype(float)
        a = self.action
        if a is not None and a.relational:
            r0, q = creation_probs(self.domain, prev, a, self.p_f, self.relational_similarity)
            if r0 == r:
                full = prev.rel[:, r].sum(axis=2) >= self.kappa
                p = np.where(prev.rel[:, r], 1.0, np.where(full[:, :, None], 0.0, q))
        if self.obs is not None and len(self.obs.rel_obs):
            rows = self.obs.rel_obs[self.obs.rel_obs[:, 0] == r]
            if len(rows):
                x, y, v = rows[:, 1], rows[:, 2], rows[:, 3].astype(bool)
                l1 = np.where(v, 1.0 - self.p_o, self.p_o)
                l0 = np.where(v, self.p_o, 1.0 - self.p_o)
                pp = p[:, x, y]
                den = pp * l1 + (1.0 - pp) * l0
                p[:, x, y] = np.divide(pp * l1, den, out=pp.copy(), where=den > 0)
        return p

    def relation_probs(self) -> np.ndarray:
        w = self.weights
        out = np.zeros((2, self.domain.n, self.domain.n))
        for r in (0, 1):
            valid = self.domain.rel_valid[r]
            rel = self.state.rel[:, r]
            p_s = rel.mean(axis=0)
            p_u = rel[:, valid].mean(axis=1).mean()
            est = w.alpha_s * p_s + w.alpha_u * p_u
            if w.alpha_m:
                est = est + w.alpha_m * self.blanket_probs(r).mean(axis=0)
            out[r] = np.where(valid, np.clip(est, 0.0, 1.0), 0.0)
        return out


def _distinct_rows(mat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index of the first occurrence of each distinct row and its count."""
    mat = np.ascontiguousarray(mat)
    seen: dict = {}
    first, counts = [], []
    for i, row in enumerate(mat):
        key = row.tobytes()
        j = seen.get(key)
        if j is None:
            seen[key] = len(first)
            first.append(i)
            counts.append(1)
        else:
            counts[j] += 1
    return np.array(first), np.array(counts)


class AssemblyASPF(AssemblyPF):
    """Particle filter with abstraction-lattice smoothing of relation marginals.

    Slots of pair ``(x, y)``: its previous value, whether ``x``/``y`` are the
    action's intended pair, the colour of ``x`` and the colour (welds) or
    size (bolts) of ``y``.  Every slot subset is used.
    """

    name = "aspf"
    SLOTS = ("prev", "x_intended", "y_intended", "x_color", "y_value")

    def __init__(self, *args, max_len: int | None = None, **kw):
        super().__init__(*args, **kw)
        self.max_len = max_len

    def tables(self) -> list[IndicatorTable]:
        """Indicator tables of both relations over distinct particles."""
        if "tables" in self._memo:
            return self._memo["tables"]
        n_part = self.state.size
        truths, feats = [], []
        a = self.action
        for r in (0, 1):
            px, py = self.pairs[r].T
            truth = self.state.rel[:, r][:, px, py]
            prev = self.prev.rel[:, r][:, px, py]
            xi = np.zeros(px.shape, dtype=bool)
            yi = np.zeros(px.shape, dtype=bool)
            if a is not None and a.relational:
                r0, a0, b0 = relation_pair(self.domain, a)
                if r0 == r:
                    xi, yi = px == a0, py == b0
            attrs = self.state.attrs
            f = np.stack([prev.astype(np.int16),
                          np.broadcast_to(xi, truth.shape).astype(np.int16),
                          np.broadcast_to(yi, truth.shape).astype(np.int16),
                          attrs[:, px, COLOR].astype(np.int16),
                          attrs[:, py, COLOR if r == 0 else SIZE].astype(np.int16)], axis=2)
            truths.append(truth)
            feats.append(f)
        flat = np.concatenate([t.astype(np.int16) for t in truths]
                              + [f.reshape(n_part, -1) for f in feats], axis=1)
        first, counts = _distinct_rows(flat)
        out = []
        for r in (0, 1):
            labels = [tuple(p) for p in self.pairs[r]]
            out.append(IndicatorTable(("WeldedTo", "BoltedTo")[r], truths[r][first],
                                      feats[r][first], labels, self.SLOTS,
                                      weights=counts.astype(float)))
        self._memo["tables"] = out
        return out

    def relation_probs(self) -> np.ndarray:
        if "aspf" in self._memo:
            return self._memo["aspf"]
        out = np.zeros((2, self.domain.n, self.domain.n))
        for r, table in enumerate(self.tables()):
            p = table.particle_weights() @ aspf_probs(table, max_len=self.max_len)
            out[r][tuple(self.pairs[r].T)] = p
        self._memo["aspf"] = out
        return out

    def log_joint(self, truth: AssemblyState) -> float:
        """Joint of the relation state treating pairs as independent."""
        p = self.relation_probs()
        total = 0.0
        for r in (0, 1):
            idx = tuple(self.pairs[r].T)
            t = truth.rel[0][r][idx]
            total += float(_log(np.where(t, p[r][idx], 1.0 - p[r][idx])).sum())
        return total


class AssemblyRKDE(AssemblyASPF):
    """Particle filter answering joint queries by relational kernel density."""

    name = "rkde"

    def __init__(self, *args, params: KernelParams | None = None, **kw):
        super().__init__(*args, **kw)
        self.params = params or KernelParams(default_p_s(self.p_f))

    def log_joint(self, truth: AssemblyState) -> float:
        tables = self.tables()
        total = np.zeros(tables[0].n_particles)
        for r, table in enumerate(tables):
            query = truth.rel[0][r][tuple(self.pairs[r].T)]
            total = total + log_kernel(table, query, self.params, max_len=self.max_len)
        return float(logsumexp(total + np.log(tables[0].particle_weights())))


class AssemblyMultiPF(AssemblyRKDE):
    """One particle population answered through several particle-filter
    estimators, so that they can be compared on identical particles."""

    name = "multi"
    MARGINALS = {"pf": AssemblyPF.relation_probs, "spf": AssemblySPF.relation_probs,
                 "aspf": AssemblyASPF.relation_probs}
    JOINTS = {"pf": AssemblyPF.log_joint, "joint_independent": AssemblyASPF.log_joint,
              "rkde": AssemblyRKDE.log_joint}

    def __init__(self, *args, weights: SmoothingWeights = SmoothingWeights(), **kw):
        super().__init__(*args, **kw)
        self.weights = weights

    blanket_probs = AssemblySPF.blanket_probs

    def log_marginals_for(self, method: str, truth: AssemblyState) -> np.ndarray:
        return self.log_marginals(truth, self.MARGINALS[method](self))

    def log_joint_for(self, method: str, truth: AssemblyState) -> float:
        return self.JOINTS[method](self, truth)


# -- Rao-Blackwellised filters ------------------------------------------------------------

def _cell_likelihood(domain: AssemblyDomain, obs: Observation, r: int, p_o: float) -> np.ndarray:
    """(n, n+1) likelihood of the anchor's observations of relation ``r`` when
    its single partner is column ``z`` (column ``n``: no partner)."""
    n = domain.n
    lik = np.ones((n, n + 1))
    rows = obs.rel_obs[obs.rel_obs[:, 0] == r] if len(obs.rel_obs) else obs.rel_obs
    for _, x, y, v in rows:
        p1 = 1.0 - p_o if v else p_o
        p0 = p_o if v else 1.0 - p_o
        col = lik[x, y]
        lik[x] *= p0
        lik[x, y] = col * p1
    return lik


class _RbpfBase(_Filter):
    """Attributes are sampled; relations are kept as per-anchor partner
    distributions updated in closed form.  Relations must not influence
    anything else (no relational similarity)."""

    def __init__(self, *args, **kw):
        super().__init__(*args, **kw)
        if self.relational_similarity:
            raise ValueError("Rao-Blackwellised filtering needs relations that are not parents")

    @property
    def attrs(self):
        return self._attrs

    def _light(self, attrs) -> AssemblyState:
        return AssemblyState(attrs, np.zeros((attrs.shape[0], 2, 0, 0), dtype=bool))

    def step(self, action: Action, obs: Observation):
        attrs = self._attrs
        if not action.relational:
            attrs = apply_propositional_fault(self.domain, self._light(attrs), action, self.p_f,
                                              self.rng).attrs
        attr_obs = Observation(obs.time, obs.attr_obs, np.zeros((0, 4), dtype=np.int64))
        logw = observation_loglik(self.domain, self._light(attrs), attr_obs, self.p_o)
        q = None
        if action.relational:
            q = creation_probs(self.domain, self._light(attrs), action, self.p_f)
        logw = logw + self._update_blocks(attrs, q, obs)
        idx = self._resample(logw, action.time)
        self._attrs = attrs[idx]
        self._take(idx)


class AssemblyRBPF(_RbpfBase):
    """Exact per-anchor blocks for at most one partner per anchor (kappa = 1).

    ``blocks[i, r, x, z]`` is the probability that anchor ``x`` has partner
    ``z`` in relation ``r`` (column ``n``: no partner).  An action creates at
    most one pair; the pair is integrated out jointly with the observation,
    then each anchor keeps its exact posterior marginal.
    """

    name = "rbpf"

    def __init__(self, *args, **kw):
        super().__init__(*args, **kw)
        if self.kappa != 1:
            raise ValueError("dense blocks hold one partner per anchor; use AssemblyRBPFSets")

    def reset(self, initial: AssemblyState):
        d = self.domain
        if (initial.rel[0].sum(axis=2) > 1).any():
            raise ValueError("initial state has an anchor with several partners")
        b = np.zeros((2, d.n, d.n + 1))
        b[:, :, d.n] = 1.0
        for r, x, y in zip(*np.nonzero(initial.rel[0])):
            b[r, x, d.n] = 0.0
            b[r, x, y] = 1.0
        self.blocks = np.repeat(b[None], self.n, axis=0)
        self._attrs = np.repeat(initial.attrs[:1], self.n, axis=0)
        self.events = []

    def _take(self, idx):
        self.blocks = self.blocks[idx]

    def _update_blocks(self, attrs, q, obs) -> np.ndarray:
        d = self.domain
        n = d.n
        logev = np.zeros(self.n)
        r_act = None
        if q is not None:
            r_act, qr = q
        new = np.empty_like(self.blocks)
        for r in (0, 1):
            b = self.blocks[:, r]                          # (N, n, n+1)
            lik = _cell_likelihood(d, obs, r, self.p_o)    # (n, n+1)
            bl = b * lik[None]
            l_empty = bl.sum(axis=2)                       # (N, n)
            safe = np.where(l_empty > 0, l_empty, 1.0)
            with np.errstate(divide="ignore"):
                logev += np.log(l_empty).sum(axis=1)
            post = bl / safe[:, :, None]
            if r == r_act:
                none = b[:, :, n]                          # (N, n)
                lc = l_empty[:, :, None] - (none * lik[None, :, n])[:, :, None] \
                    + none[:, :, None] * lik[None, :, :n]  # (N, n, n): L after creating (x, y)
                ratio = np.where(l_empty[:, :, None] > 0, lc / safe[:, :, None], 0.0)
                qr_ = np.where(d.rel_valid[r][None], qr, 0.0)
                q_none = np.clip(1.0 - qr_.sum(axis=(1, 2)), 0.0, 1.0)
                weighted = qr_ * ratio
                mix = q_none + weighted.sum(axis=(1, 2))
                with np.errstate(divide="ignore"):
                    logev += np.log(mix)
                mix_safe = np.where(mix > 0, mix, 1.0)
                pi = weighted / mix_safe[:, None, None]    # P(pair created | obs)
                pi_x = pi.sum(axis=2)
                lc_safe = np.where(lc > 0, lc, 1.0)
                s1 = (pi / lc_safe).sum(axis=2)            # (N, n)
                post = (1.0 - pi_x)[:, :, None] * post
                post[:, :, :n] += bl[:, :, :n] * s1[:, :, None]
                post[:, :, :n] += pi * none[:, :, None] * lik[None, :, :n] / lc_safe
            total = post.sum(axis=2, keepdims=True)
            post = np.where(total > 0, post / np.where(total > 0, total, 1.0), b)
            new[:, r] = post
        self.blocks = new
        return logev

    def relation_probs(self) -> np.ndarray:
        return self.blocks[:, :, :, :self.domain.n].mean(axis=0)

    def log_joint(self, truth: AssemblyState) -> float:
        """Product-of-blocks joint averaged over particles."""
        d = self.domain
        rel = truth.rel[0]
        ll = np.zeros(self.n)
        for r in (0, 1):
            partner = np.where(rel[r].any(axis=1), rel[r].argmax(axis=1), d.n)
            anchors = np.nonzero(d.rel_valid[r].any(axis=1))[0]
            ll += _log(self.blocks[:, r, anchors, partner[anchors]]).sum(axis=1)
        return float(logsumexp(ll) - np.log(self.n))


class AssemblyRBPFSets(_RbpfBase):
    """Per-anchor distributions over partner sets of size at most ``kappa``.

    Cells are stored sparsely as ``{frozenset of partners: prob}``; cells
    whose probability falls below ``prune`` are dropped.
    """

    name = "rbpf_sets"

    def __init__(self, *args, prune: float = 1e-12, **kw):
        super().__init__(*args, **kw)
        self.prune = prune

    def reset(self, initial: AssemblyState):
        d = self.domain
        base = []
        for r in (0, 1):
            anchors = np.nonzero(d.rel_valid[r].any(axis=1))[0]
            base.append({int(x): {frozenset(int(y) for y in np.nonzero(initial.rel[0, r, x])[0]): 1.0}
                         for x in anchors})
        self.blocks = [[{x: dict(c) for x, c in base[r].items()} for r in (0, 1)]
                       for _ in range(self.n)]
        self._attrs = np.repeat(initial.attrs[:1], self.n, axis=0)
        self.events = []

    def _take(self, idx):
        self.blocks = [[{x: dict(c) for x, c in self.blocks[i][r].items()} for r in (0, 1)]
                       for i in idx]

    def _obs_by_anchor(self, obs, r):
        out: dict = {}
        rows = obs.rel_obs[obs.rel_obs[:, 0] == r] if len(obs.rel_obs) else obs.rel_obs
        for _, x, y, v in rows:
            out.setdefault(int(x), []).append((int(y), bool(v)))
        return out

    def _lik(self, cell, rows):
        p = 1.0
        for y, v in rows:
            p *= (1.0 - self.p_o) if ((y in cell) == v) else self.p_o
        return p

    def _update_blocks(self, attrs, q, obs) -> np.ndarray:
        logev = np.zeros(self.n)
        r_act = None
        if q is not None:
            r_act, qr = q
            qr = np.where(self.domain.rel_valid[r_act][None], qr, 0.0)
        for r in (0, 1):
            rows = self._obs_by_anchor(obs, r)
            for i in range(self.n):
                blocks = self.blocks[i][r]
                creating = {}
                if r == r_act:
                    xs, ys = np.nonzero(qr[i])
                    for x, y in zip(xs.tolist(), ys.tolist()):
                        creating.setdefault(x, []).append((y, float(qr[i, x, y])))
                log_l0, lc = 0.0, {}
                for x, cells in blocks.items():
                    obs_x = rows.get(x, ())
                    if not obs_x:
                        # unobserved anchor: every cell has likelihood one
                        l0 = sum(cells.values())
                        log_l0 += np.log(l0)
                        for y, qv in creating.get(x, ()):
                            lc[(x, y)] = (qv, l0, l0)
                        continue
                    l0 = sum(p * self._lik(c, obs_x) for c, p in cells.items())
                    log_l0 += np.log(l0) if l0 > 0 else -np.inf
                    seen = {y for y, _ in obs_x}
                    for y, qv in creating.get(x, ()):
                        # adding an unreported partner leaves the likelihood unchanged
                        l = l0 if y not in seen else sum(p * self._lik(self._apply(c, y), obs_x)
                                                         for c, p in cells.items())
                        lc[(x, y)] = (qv, l, l0)
                mix = 1.0
                if r == r_act:
                    mix = max(0.0, 1.0 - float(qr[i].sum()))
                    mix += sum(qv * (l / l0 if l0 > 0 else 0.0) for qv, l, l0 in lc.values())
                logev[i] += log_l0 + (np.log(mix) if mix > 0 else -np.inf)
                if not np.isfinite(logev[i]):
                    continue
                pi = {k: qv * (l / l0) / mix for k, (qv, l, l0) in lc.items() if l0 > 0}
                pi_x: dict = {}
                for (x, _), v in pi.items():
                    pi_x[x] = pi_x.get(x, 0.0) + v
                for x, cells in blocks.items():
                    obs_x = rows.get(x, ())
                    if not obs_x and x not in pi_x:
                        continue
                    lik = {c: self._lik(c, obs_x) for c in cells}
                    seen = {y for y, _ in obs_x}
                    l0 = sum(p * lik[c] for c, p in cells.items())
                    post: dict = {}
                    keep = 1.0 - pi_x.get(x, 0.0)
                    for c, p in cells.items():
                        post[c] = keep * p * lik[c] / l0
                    for y, _ in creating.get(x, ()):
                        w = pi.get((x, y), 0.0)
                        if w <= 0.0:
                            continue
                        scale = w / lc[(x, y)][1]
                        for c, p in cells.items():
                            c2 = self._apply(c, y)
                            l2 = self._lik(c2, obs_x) if y in seen else lik[c]
                            post[c2] = post.get(c2, 0.0) + scale * p * l2
                    total = sum(post.values())
                    blocks[x] = {c: p / total for c, p in post.items() if p / total > self.prune}
                    z = sum(blocks[x].values())
                    blocks[x] = {c: p / z for c, p in blocks[x].items()}
        return logev

    def _apply(self, cell, y):
        if y in cell or len(cell) >= self.kappa:
            return cell
        return cell | {y}

    def relation_probs(self) -> np.ndarray:
        d = self.domain
        out = np.zeros((2, d.n, d.n))
        for part in self.blocks:
            for r in (0, 1):
                for x, cells in part[r].items():
                    for c, p in cells.items():
                        for y in c:
                            out[r, x, y] += p
        return out / self.n

    def log_joint(self, truth: AssemblyState) -> float:
        rel = truth.rel[0]
        ll = np.zeros(self.n)
        for i, part in enumerate(self.blocks):
            for r in (0, 1):
                for x, cells in part[r].items():
                    ll[i] += _log(cells.get(frozenset(np.nonzero(rel[r, x])[0].tolist()), 0.0))
        return float(logsumexp(ll) - np.log(self.n))

    def cell_count(self) -> int:
        return sum(len(cells) for part in self.blocks for r in (0, 1) for cells in part[r].values())


FILTERS = {"pf": AssemblyPF, "spf": AssemblySPF, "aspf": AssemblyASPF, "rkde": AssemblyRKDE,
           "rbpf": AssemblyRBPF, "rbpf_sets": AssemblyRBPFSets}


def make_filter(method: str, domain: AssemblyDomain, n_particles: int, p_f: float, p_o: float,
                rng, **kw) -> _Filter:
    try:
        cls = FILTERS[method]
    except KeyError:
        raise ValueError(f"unknown method {method!r}; choose from {sorted(FILTERS)}") from None
    return cls(domain, n_particles, p_f, p_o, rng, **kw)
