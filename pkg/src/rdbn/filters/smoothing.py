"""Smoothing of particle estimates for complex predicates.

The particles' view of one complex predicate ``R`` is an
:class:`IndicatorTable`: the truth of every type-correct grounding
``X_{a,b}`` in every particle, together with the values of ``R``'s parent
slots for that grounding (for example the colour of ``a`` or whether
``R(a, b)`` held at ``t-1``).  Abstractions are conjunctions of
``slot = value`` tests over those slots.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np

__all__ = [
    "IndicatorTable", "SmoothingWeights", "Abstraction", "abstraction_stats", "abstraction_weight",
    "build_relevant_abstractions", "select_abstractions", "spf_marginals", "spf_marginal",
    "aspf_probs", "aspf_marginals", "aspf_marginal", "joint_independent_log", "joint_independent",
    "indicator_table_from_states", "SelectionTrace",
]


@dataclass
class IndicatorTable:
    """``truth``: (N, M) bool; ``features``: (N, M, S) int slot values.

    ``labels[m]`` names indicator ``m`` (its argument tuple); ``slots`` names
    the parent slots.
    """

    predicate: str
    truth: np.ndarray
    features: np.ndarray
    labels: list
    slots: tuple
    weights: np.ndarray | None = None   # optional particle weights (N,)

    def __post_init__(self):
        self.truth = np.asarray(self.truth, dtype=bool)
        self.features = np.asarray(self.features)
        if self.features.ndim == 2:
            self.features = self.features[:, :, None]
        n, m = self.truth.shape
        if self.features.shape[:2] != (n, m):
            raise ValueError("features must be (N, M, S) matching truth (N, M)")
        if len(self.slots) != self.features.shape[2]:
            raise ValueError("one slot name per feature column")
        if n == 0:
            raise ValueError("empty particle set")

    @property
    def n_particles(self) -> int:
        return self.truth.shape[0]

    @property
    def n_indicators(self) -> int:
        return self.truth.shape[1]

    def index(self, label) -> int:
        return self.labels.index(tuple(label))

    def particle_weights(self) -> np.ndarray:
        if self.weights is None:
            return np.full(self.n_particles, 1.0 / self.n_particles)
        w = np.asarray(self.weights, dtype=float)
        return w / w.sum()


@dataclass(frozen=True)
class SmoothingWeights:
    alpha_s: float = 0.8
    alpha_u: float = 0.1
    alpha_m: float = 0.1

    def __post_init__(self):
        vals = (self.alpha_s, self.alpha_u, self.alpha_m)
        if any(not 0.0 <= a <= 1.0 for a in vals) or abs(sum(vals) - 1.0) > 1e-9:
            raise ValueError("smoothing weights must lie in [0, 1] and sum to 1")


@dataclass(frozen=True)
class Abstraction:
    """Indicators whose slot values satisfy every ``(slot, value)`` test."""

    predicate: str
    constraint: tuple = ()

    @property
    def length(self) -> int:
        return len(self.constraint)

    def members(self, table: IndicatorTable) -> np.ndarray:
        """(N, M) membership mask."""
        mask = np.ones(table.truth.shape, dtype=bool)
        for slot, value in self.constraint:
            mask &= table.features[:, :, slot] == value
        return mask

    def describe(self, table: IndicatorTable | None = None) -> str:
        if not self.constraint:
            return f"{self.predicate}(*)"
        name = (lambda s: table.slots[s]) if table is not None else str
        return " & ".join(f"{name(s)}={v}" for s, v in self.constraint)


def abstraction_stats(table: IndicatorTable, a: Abstraction) -> tuple[np.ndarray, np.ndarray]:
    """Per-particle size ``|A|`` and true-count ``n_A``."""
    mask = a.members(table)
    return mask.sum(axis=1), (mask & table.truth).sum(axis=1)


def abstraction_weight(size, length: int):
    """Unnormalised length-heuristic weight ``|A| ** Length``."""
    size = np.asarray(size, dtype=float)
    if np.any(size < 1):
        raise ValueError("abstraction size must be at least 1")
    out = size ** length
    return float(out) if out.ndim == 0 else out


def build_relevant_abstractions(table: IndicatorTable, indicator: int, particle: int = 0) -> list:
    """All ``2**S`` abstractions fixing a subset of slots to the values the
    indicator has in ``particle``; the first one is the null abstraction."""
    vals = table.features[particle, indicator]
    out = []
    for k in range(len(table.slots) + 1):
        for subset in combinations(range(len(table.slots)), k):
            out.append(Abstraction(table.predicate, tuple((s, int(vals[s])) for s in subset)))
    return out


# -- simple smoothing -------------------------------------------------------------

def spf_marginals(table: IndicatorTable, p_m: np.ndarray | None,
                  weights: SmoothingWeights = SmoothingWeights()) -> np.ndarray:
    """``alpha_s P_s + alpha_u P_u + alpha_m P_m`` for every indicator.

    ``P_s`` is the particle frequency, ``P_u`` the per-particle fraction of
    true indicators averaged over particles and ``P_m`` (N, M) the model
    probability of each indicator given its Markov blanket in each particle.
    """
    pw = table.particle_weights()
    p_s = pw @ table.truth
    p_u = float(pw @ table.truth.mean(axis=1))
    out = weights.alpha_s * p_s + weights.alpha_u * p_u
    if weights.alpha_m:
        if p_m is None:
            raise ValueError("alpha_m > 0 needs Markov-blanket probabilities")
        out = out + weights.alpha_m * (pw @ np.asarray(p_m, dtype=float))
    return np.clip(out, 0.0, 1.0)


def spf_marginal(table: IndicatorTable, label, p_m=None,
                 weights: SmoothingWeights = SmoothingWeights()) -> float:
    return float(spf_marginals(table, p_m, weights)[table.index(label)])


# -- abstraction smoothing ---------------------------------------------------------

def _group_stats(keys: np.ndarray, truth: np.ndarray, n_keys: int):
    """For (N, M) integer keys in ``[0, n_keys)``: per-entry size and
    true-count of its key group within the same particle."""
    n = keys.shape[0]
    flat = keys + (np.arange(n, dtype=np.int64)[:, None] * n_keys)
    size = np.bincount(flat.ravel(), minlength=n * n_keys)
    true = np.bincount(flat.ravel(), weights=truth.ravel().astype(float), minlength=n * n_keys)
    return size[flat], true[flat]


def _slot_keys(table: IndicatorTable, subset) -> tuple[np.ndarray, int]:
    """Mixed-radix code of the slot values in ``subset`` and the code range."""
    key = np.zeros(table.truth.shape, dtype=np.int64)
    span = 1
    for s in subset:
        col = table.features[:, :, s].astype(np.int64)
        lo = col.min()
        width = int(col.max() - lo + 1)
        key = key * width + (col - lo)
        span *= width
    return key, span


def _lattice_terms(table: IndicatorTable, max_len: int | None = None):
    """Yield ``(length, size, count)`` arrays (N, M) for every slot subset."""
    n_slots = len(table.slots)
    top = n_slots if max_len is None else min(max_len, n_slots)
    for k in range(top + 1):
        for subset in combinations(range(n_slots), k):
            key, span = _slot_keys(table, subset)
            size, count = _group_stats(key, table.truth, span)
            yield k, size, count


def aspf_probs(table: IndicatorTable, abstractions: Sequence[Abstraction] | None = None,
               max_len: int | None = None, normalized: bool = True,
               weights: Sequence[float] | None = None) -> np.ndarray:
    """Per-particle smoothed probabilities ``P_i(X = 1)``, shape (N, M).

    With ``abstractions=None`` every abstraction relevant to each indicator
    (all slot subsets up to ``max_len``) is used.  Otherwise the given list
    is used, the null abstraction added unless explicit ``weights`` (one per
    listed abstraction) replace the ``|A| ** Length`` heuristic.
    ``normalized=False`` returns the numerator ``sum_A w_A n_A / |A|``
    without the ``1/c``.
    """
    num = np.zeros(table.truth.shape)
    den = np.zeros(table.truth.shape)
    if abstractions is None:
        terms = _lattice_terms(table, max_len)
    else:
        terms = _list_terms(table, abstractions, weights is None)
    fixed = None if weights is None else iter(np.asarray(weights, dtype=float))
    for length, size, count in terms:
        member = size > 0
        safe = np.maximum(size, 1)
        if fixed is None:
            w = np.where(member, safe.astype(float) ** length, 0.0)
        else:
            w = np.where(member, next(fixed), 0.0)
        num += w * count / safe
        den += w
    if not normalized:
        return num
    # indicators outside every listed abstraction get NaN
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)


def _list_terms(table, abstractions, add_null=True):
    items = list(abstractions)
    if add_null and not any(a.length == 0 for a in items):
        items.insert(0, Abstraction(table.predicate, ()))
    for a in items:
        mask = a.members(table)
        size = mask.sum(axis=1, keepdims=True)
        count = (mask & table.truth).sum(axis=1, keepdims=True)
        yield a.length, np.where(mask, size, 0), np.where(mask, count, 0)


def aspf_marginals(table: IndicatorTable, abstractions=None, max_len=None,
                   weights=None) -> np.ndarray:
    """Particle average of :func:`aspf_probs`, shape (M,)."""
    return table.particle_weights() @ aspf_probs(table, abstractions, max_len, weights=weights)


def aspf_marginal(table: IndicatorTable, label, abstractions=None, max_len=None,
                  weights=None) -> float:
    p = float(aspf_marginals(table, abstractions, max_len, weights)[table.index(label)])
    if np.isnan(p):
        raise ValueError(f"no abstraction contains {label}")
    return p


def joint_independent_log(marginals: np.ndarray, query: np.ndarray) -> float:
    """``sum_X log P(X = x)`` treating indicators as independent."""
    p = np.where(np.asarray(query, dtype=bool), marginals, 1.0 - np.asarray(marginals))
    with np.errstate(divide="ignore"):
        return float(np.sum(np.log(p)))


def joint_independent(marginals: np.ndarray, query: np.ndarray) -> float:
    return float(np.exp(joint_independent_log(marginals, query)))


# -- greedy abstraction selection ---------------------------------------------------

@dataclass
class SelectionTrace:
    """Scores of the growing abstraction, one list per selected abstraction."""

    scores: list = field(default_factory=list)


def _score(mask: np.ndarray, truth: np.ndarray) -> float:
    """Mean negative log-likelihood of the covered values under the
    abstraction's Laplace-smoothed frequency."""
    size = mask.sum()
    if size == 0:
        return np.inf
    ones = (mask & truth).sum()
    p1 = (ones + 1.0) / (size + 2.0)
    return float(-(ones * np.log(p1) + (size - ones) * np.log1p(-p1)) / size)


def select_abstractions(table: IndicatorTable, max_abs: int = 64, max_len: int | None = None,
                        trace: SelectionTrace | None = None) -> list[Abstraction]:
    """Greedy covering selection of abstractions.

    Starting from the null abstraction, repeatedly add the ``(slot, value)``
    test with the lowest score until none improves it or ``max_len`` tests
    are used; keep the result, drop the instances it covers and start again,
    up to ``max_abs`` abstractions.  Ties go to the earlier slot, then the
    smaller value.
    """
    n_slots = len(table.slots)
    max_len = n_slots if max_len is None else max_len
    if max_abs < 1 or max_len < 0:
        raise ValueError("max_abs must be >= 1 and max_len >= 0")
    remaining = np.ones(table.truth.shape, dtype=bool)
    chosen: list[Abstraction] = []
    if max_len == 0:
        return [Abstraction(table.predicate, ())]
    while len(chosen) < max_abs and remaining.any():
        current: tuple = ()
        cur_mask = remaining.copy()
        best = np.inf
        history = []
        while len(current) < max_len:
            used = {s for s, _ in current}
            cand = None
            for s in range(n_slots):
                if s in used:
                    continue
                col = table.features[:, :, s]
                for v in np.unique(col[cur_mask]):
                    temp = tuple(sorted(current + ((s, int(v)),)))
                    if Abstraction(table.predicate, temp) in chosen:
                        continue
                    sc = _score(cur_mask & (col == v), table.truth)
                    if sc < best:
                        best, cand = sc, (temp, cur_mask & (col == v))
            if cand is None:
                break
            current, cur_mask = cand
            history.append(best)
        if not current:
            break
        if trace is not None:
            trace.scores.append(history)
        chosen.append(Abstraction(table.predicate, current))
        remaining &= ~Abstraction(table.predicate, current).members(table)
    return chosen


# -- building tables from world states ------------------------------------------------

def indicator_table_from_states(states, vocabulary, pred: str, slot_fn=None, slots=None,
                                weights=None) -> IndicatorTable:
    """Indicator table of ``pred`` over a list of world states (one per particle).

    ``slot_fn(state, args) -> tuple of hashable`` gives the slot values; by
    default the value of every functional predicate at every argument
    position (``None`` when unset).  Values are integer-coded per slot.
    """
    labels = vocabulary.groundings(pred)
    sig = vocabulary.signature(pred)
    if slot_fn is None:
        funcs = [p for p, s in vocabulary.predicates.items() if s.functional]
        pos = range(sig.arity)
        slots = tuple(f"{f}[{k}]" for k in pos for f in funcs
                      if vocabulary.predicates[f].arg_types[0] == sig.arg_types[k])
        pairs = [(f, k) for k in pos for f in funcs
                 if vocabulary.predicates[f].arg_types[0] == sig.arg_types[k]]

        def slot_fn(state, args):
            return tuple(state.value(f, args[k]) for f, k in pairs)
    raw = [[slot_fn(s, a) for a in labels] for s in states]
    n_slots = len(raw[0][0]) if labels else 0
    slots = tuple(slots) if slots is not None else tuple(f"slot{k}" for k in range(n_slots))
    codes = [dict() for _ in range(n_slots)]
    feats = np.zeros((len(states), len(labels), n_slots), dtype=np.int64)
    for i, row in enumerate(raw):
        for m, vals in enumerate(row):
            for s, v in enumerate(vals):
                feats[i, m, s] = codes[s].setdefault(v, len(codes[s]))
    truth = np.array([[s.holds(pred, a) for a in labels] for s in states], dtype=bool)
    return IndicatorTable(pred, truth, feats, [tuple(a) for a in labels], slots, weights)
