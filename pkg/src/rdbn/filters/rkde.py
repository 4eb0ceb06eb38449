"""Relational kernel density estimate of the joint state of complex predicates.

For one complex predicate with ``M`` indicators, a query state ``x`` with
``n`` true indicators and particle ``i`` with ``n_i`` true indicators,

    K(x, x_i) = B(n; n_i, p_s) * sum_{y true in x} u_i(y) / (n * d_i)

where ``u_i(y) = sum_{A contains y} w_A n_A^i / |A|`` and the normaliser

    d_i = C(M - 1, n - 1) * sum_A w_A n_A^i / n

makes the second factor sum to one over all states with ``n`` true
indicators.  Everything is computed in log space.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np
from scipy.special import gammaln, logsumexp
from scipy.stats import binom

from .smoothing import Abstraction, IndicatorTable, _slot_keys, aspf_probs

__all__ = ["KernelParams", "abstraction_mass", "log_normalizer", "normalizer", "log_kernel",
           "kernel", "rkde_log_joint", "rkde_joint", "indicator_factor", "default_p_s"]


@dataclass(frozen=True)
class KernelParams:
    """``p_s``: success probability of the count factor; ``use_count`` turns
    that factor off for domains where it does not apply."""

    p_s: float = 1.0
    use_count: bool = True

    def __post_init__(self):
        if not 0.0 <= self.p_s <= 1.0:
            raise ValueError("p_s must lie in [0, 1]")


def default_p_s(p_f: float) -> float:
    """Only the leave-unchanged relational branch changes the true count."""
    return 1.0 - 0.05 * p_f


def _log_comb(n, k):
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def abstraction_mass(table: IndicatorTable, abstractions: Sequence[Abstraction] | None = None,
                     max_len: int | None = None, weights=None) -> np.ndarray:
    """``sum_A w_A n_A^i`` per particle, summing once per abstraction cell."""
    n = table.n_particles
    out = np.zeros(n)
    if abstractions is None:
        n_slots = len(table.slots)
        top = n_slots if max_len is None else min(max_len, n_slots)
        flat_truth = table.truth.astype(float)
        for k in range(top + 1):
            for subset in combinations(range(n_slots), k):
                keys, span = _slot_keys(table, subset)
                flat = keys + np.arange(n, dtype=np.int64)[:, None] * span
                size = np.bincount(flat.ravel(), minlength=n * span).reshape(n, span)
                cnt = np.bincount(flat.ravel(), weights=flat_truth.ravel(),
                                  minlength=n * span).reshape(n, span)
                out += (size.astype(float) ** k * cnt).sum(axis=1)
        return out
    items = list(abstractions)
    if weights is None and not any(a.length == 0 for a in items):
        items.insert(0, Abstraction(table.predicate, ()))
    for j, a in enumerate(items):
        mask = a.members(table)
        size = mask.sum(axis=1)
        cnt = (mask & table.truth).sum(axis=1)
        w = size.astype(float) ** a.length if weights is None else np.full(n, float(weights[j]))
        out += np.where(size > 0, w * cnt, 0.0)
    return out


def log_normalizer(mass: np.ndarray, n_indicators: int, n_true: int) -> np.ndarray:
    """``log d`` for every particle (``-inf`` where the mass is zero)."""
    if n_true < 1 or n_true > n_indicators:
        raise ValueError("normaliser needs 1 <= n <= M")
    with np.errstate(divide="ignore"):
        return _log_comb(n_indicators - 1, n_true - 1) + np.log(mass) - np.log(n_true)


def normalizer(mass, n_indicators: int, n_true: int):
    out = np.exp(log_normalizer(np.asarray(mass, dtype=float), n_indicators, n_true))
    return float(out) if np.ndim(out) == 0 else out


def log_kernel(table: IndicatorTable, query, params: KernelParams = KernelParams(),
               abstractions=None, max_len=None, weights=None) -> np.ndarray:
    """``log K(x, x_i)`` for every particle ``i``, shape (N,)."""
    query = np.asarray(query, dtype=bool)
    if query.shape != (table.n_indicators,):
        raise ValueError("query must assign every indicator")
    n = int(query.sum())
    n_i = table.truth.sum(axis=1)
    if params.use_count:
        with np.errstate(divide="ignore"):
            out = binom.logpmf(n, n_i, params.p_s)
        out = np.where(np.isnan(out), -np.inf, out)
    else:
        out = np.zeros(table.n_particles)
    if n == 0:
        return out
    u = aspf_probs(table, abstractions, max_len, normalized=False, weights=weights)
    mass = abstraction_mass(table, abstractions, max_len, weights)
    picked = u[:, query].sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        part = np.log(picked) - np.log(n) - log_normalizer(mass, table.n_indicators, n)
    part = np.where(mass > 0, part, -np.inf)
    return out + part


def kernel(table, query, params: KernelParams = KernelParams(), **kw) -> np.ndarray:
    return np.exp(log_kernel(table, query, params, **kw))


def rkde_log_joint(tables: Sequence[IndicatorTable], queries, params: KernelParams = KernelParams(),
                   **kw) -> float:
    """``log (sum_i w_i prod_R K_R(x_R, x_R^i))`` over the complex predicates."""
    if not tables:
        raise ValueError("no complex predicates")
    total = np.zeros(tables[0].n_particles)
    for table, q in zip(tables, queries, strict=True):
        total = total + log_kernel(table, q, params, **kw)
    lw = np.log(tables[0].particle_weights())
    return float(logsumexp(total + lw))


def rkde_joint(tables, queries, params: KernelParams = KernelParams(), **kw) -> float:
    return float(np.exp(rkde_log_joint(tables, queries, params, **kw)))


def indicator_factor(table: IndicatorTable, query, abstractions=None, max_len=None,
                     weights=None) -> float:
    """Particle average of the mean smoothed probability of the query's true
    indicators (the kernel without count factor and normaliser); 1 when the
    query has no true indicator."""
    query = np.asarray(query, dtype=bool)
    if not query.any():
        return 1.0
    p = aspf_probs(table, abstractions, max_len, weights=weights)
    return float(table.particle_weights() @ p[:, query].mean(axis=1))
