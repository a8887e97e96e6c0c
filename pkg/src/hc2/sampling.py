"""Contrastive candidate construction.

Covers the memory bank, label-aware coarse selection, k-means fine
filtering, and forward-diffusion negative synthesis.  Everything here works
on detached numpy vectors; graph nodes never enter this module.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ContractError
from .rng import RngStream


@dataclass(frozen=True)
class MemoryBankEntry:
    """Detached snapshot of one sample: shared rep, embedding, and metadata."""
    z_snapshot: np.ndarray
    embed_snapshot: np.ndarray
    label: int
    scenario: int
    cluster: int


class MemoryBank:
    """Fixed-capacity FIFO buffer of past representations.

    Iteration order is oldest first; after more than `capacity` pushes the
    bank holds exactly the most recent `capacity` entries.  Metadata is also
    exposed as cached arrays so per-anchor selection stays vectorized.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigError(f"bank capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._buf: deque[MemoryBankEntry] = deque(maxlen=capacity)
        self._version = 0
        self._cache_version = -1
        self._cache = None

    def push(self, entry: MemoryBankEntry) -> None:
        if not isinstance(entry.z_snapshot, np.ndarray) or \
           not isinstance(entry.embed_snapshot, np.ndarray):
            raise ContractError("bank entries must hold plain numpy vectors")
        self._buf.append(entry)
        self._version += 1

    def entries(self) -> list[MemoryBankEntry]:
        return self._snapshot()[0]

    def reassign_clusters(self, centroids) -> None:
        """Relabel every entry against fresh centroids (after a refresh)."""
        cents = np.asarray(centroids, dtype=float)
        for i, entry in enumerate(self._buf):
            cl = int(_sq_dists(entry.embed_snapshot.reshape(1, -1), cents)[0].argmin())
            self._buf[i] = replace(entry, cluster=cl)
        self._version += 1

    def _snapshot(self):
        """(entries, labels, scenarios, clusters) with arrays cached per version."""
        if self._cache_version != self._version:
            entries = list(self._buf)
            labels = np.asarray([e.label for e in entries], dtype=np.intp)
            scens = np.asarray([e.scenario for e in entries], dtype=np.intp)
            clusters = np.asarray([e.cluster for e in entries], dtype=np.intp)
            self._cache = (entries, labels, scens, clusters)
            self._cache_version = self._version
        return self._cache

    def __len__(self) -> int:
        return len(self._buf)

    def __iter__(self):
        return iter(self._buf)


def bank_push(bank: MemoryBank, entry: MemoryBankEntry) -> MemoryBank:
    bank.push(entry)
    return bank


# ---------------------------------------------------------------------------
# forward diffusion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiffusionSchedule:
    """Variance schedule: beta_t per step and the running product alpha_bar_t."""
    T: int
    beta: np.ndarray
    alpha_bar: np.ndarray


def build_schedule(beta_start: float, beta_end: float, T: int) -> DiffusionSchedule:
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    if T < 1:
        raise ConfigError(f"diffusion step count must be >= 1, got {T}")
    beta = np.linspace(beta_start, beta_end, T)
    alpha_bar = np.cumprod(1.0 - beta)
    return DiffusionSchedule(T=T, beta=beta, alpha_bar=alpha_bar)


def _check_step(schedule: DiffusionSchedule, t: int) -> None:
    if not (1 <= t <= schedule.T):
        raise ContractError(f"diffusion step {t} outside [1, {schedule.T}]")


def diffuse(z: np.ndarray, t: int, schedule: DiffusionSchedule,
            rng: RngStream | None = None, noise: np.ndarray | None = None) -> np.ndarray:
    """Closed-form forward step: sqrt(abar_t) z + sqrt(1 - abar_t) m.

    m is standard normal per coordinate, drawn from rng unless injected.
    The result is a plain vector; gradients never flow into it.
    """
    _check_step(schedule, t)
    z = np.asarray(z, dtype=float)
    if noise is None:
        noise = rng.normal(z.shape)
    abar = schedule.alpha_bar[t - 1]
    return np.sqrt(abar) * z + np.sqrt(1.0 - abar) * noise


def diffuse_step(x: np.ndarray, t: int, schedule: DiffusionSchedule,
                 rng: RngStream | None = None, noise: np.ndarray | None = None) -> np.ndarray:
    """Single forward step t-1 -> t: sqrt(1 - beta_t) x + sqrt(beta_t) m."""
    _check_step(schedule, t)
    x = np.asarray(x, dtype=float)
    if noise is None:
        noise = rng.normal(x.shape)
    beta = schedule.beta[t - 1]
    return np.sqrt(1.0 - beta) * x + np.sqrt(beta) * noise


# ---------------------------------------------------------------------------
# k-means (Lloyd's)
# ---------------------------------------------------------------------------

def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # direct differences keep exact ties exact; the expanded form does not
    return ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def kmeans_fit(points, C: int, iters: int, rng: RngStream):
    """Lloyd's algorithm with deterministic tie-breaking.

    Centroids start at C distinct sampled points.  Nearest-centroid ties go
    to the lowest centroid index; a cluster that empties is re-seeded with
    the point currently farthest from its own centroid.  Runs `iters`
    iterations or stops early once assignments are stable; a final
    assignment pass aligns the returned labels with the returned centroids.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ConfigError("kmeans needs a non-empty 2-D point array")
    n = pts.shape[0]
    if not (1 <= C <= n):
        raise ConfigError(f"cluster count {C} must be in [1, {n}]")
    if iters < 1:
        raise ConfigError(f"iteration count must be >= 1, got {iters}")

    centroids = pts[rng.choice(n, C, replace=False)].copy()
    assign = None
    for _ in range(iters):
        d2 = _sq_dists(pts, centroids)
        new_assign = d2.argmin(axis=1)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        taken = set()
        for c in range(C):
            members = np.flatnonzero(assign == c)
            if members.size:
                centroids[c] = pts[members].mean(axis=0)
        for c in range(C):
            if np.any(assign == c):
                continue
            point_d2 = d2[np.arange(n), assign].copy()
            if taken:
                point_d2[list(taken)] = -np.inf
            far = int(point_d2.argmax())
            taken.add(far)
            centroids[c] = pts[far]
    assign = _sq_dists(pts, centroids).argmin(axis=1)
    return centroids, assign


def assign_cluster(point, centroids) -> int:
    cents = np.asarray(centroids, dtype=float)
    if cents.ndim != 2 or cents.shape[0] == 0:
        raise ContractError("assign_cluster needs at least one centroid")
    p = np.asarray(point, dtype=float).reshape(1, -1)
    return int(_sq_dists(p, cents)[0].argmin())


def assign_clusters(points, centroids) -> np.ndarray:
    """Vectorized nearest-centroid labels, same tie rule as assign_cluster."""
    cents = np.asarray(centroids, dtype=float)
    if cents.ndim != 2 or cents.shape[0] == 0:
        raise ContractError("assign_clusters needs at least one centroid")
    pts = np.asarray(points, dtype=float)
    return _sq_dists(pts, cents).argmin(axis=1)


# ---------------------------------------------------------------------------
# label-aware selection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Candidate:
    """One contrastive candidate with enough context to weight and diffuse it.

    provenance is "batch", "bank", or "diffused"; index points into the
    batch or bank for the first two and is -1 for synthetic entries.
    """
    provenance: str
    index: int
    label: int
    scenario: int
    z_value: np.ndarray
    embed_snapshot: np.ndarray
    t: int = 0
    source_provenance: str = ""
    source_index: int = -1


@dataclass
class ContrastiveSet:
    """Anchor's positive plus its negative list (provenance-tagged)."""
    anchor: int
    positive: Candidate
    negatives: list[Candidate] = field(default_factory=list)


@dataclass(frozen=True)
class BatchView:
    """Detached per-position arrays the selector needs from a forward pass."""
    labels: np.ndarray
    scenarios: np.ndarray
    clusters: np.ndarray
    z_values: np.ndarray
    e_values: np.ndarray

    def __len__(self) -> int:
        return int(self.labels.shape[0])


def select_contrastive(anchor: int, batch: BatchView, bank: MemoryBank,
                       N: int, fine: bool, centroids, rng: RngStream) -> ContrastiveSet | None:
    """Label-aware selection over batch plus bank.

    The positive is one uniform draw from other-scenario same-label
    candidates; negatives are up to N uniform draws without replacement from
    other-scenario opposite-label candidates.  With fine filtering each pool
    is first cut to the anchor's cluster, falling back to the full pool when
    the cut is empty.  Pools are ordered batch-first (ascending position,
    anchor excluded) then bank (oldest first), so selection is reproducible
    given (seed, batch, bank).  Returns None when either pool is empty; the
    caller counts the skip.
    """
    B = len(batch)
    if not (0 <= anchor < B):
        raise ContractError(f"anchor {anchor} outside batch of {B}")
    if fine and centroids is None:
        raise ContractError("fine selection requires centroids")
    a_label = int(batch.labels[anchor])
    a_scen = int(batch.scenarios[anchor])

    entries, bk_labels, bk_scens, bk_clusters = bank._snapshot()
    b_other = batch.scenarios != a_scen
    b_other[anchor] = False
    b_same_label = batch.labels == a_label
    k_other = bk_scens != a_scen
    k_same_label = bk_labels == a_label

    def pools(positive: bool):
        b_mask = b_other & (b_same_label if positive else ~b_same_label)
        k_mask = k_other & (k_same_label if positive else ~k_same_label)
        if fine:
            a_cluster = int(batch.clusters[anchor])
            fb = b_mask & (batch.clusters == a_cluster)
            fk = k_mask & (bk_clusters == a_cluster)
            if fb.any() or fk.any():
                b_mask, k_mask = fb, fk
        return np.flatnonzero(b_mask), np.flatnonzero(k_mask)

    pos_b, pos_k = pools(True)
    neg_b, neg_k = pools(False)
    n_pos = pos_b.size + pos_k.size
    n_neg = neg_b.size + neg_k.size
    if n_pos == 0 or n_neg == 0:
        return None

    def realize(pool_b, pool_k, j) -> Candidate:
        if j < pool_b.size:
            i = int(pool_b[j])
            return Candidate("batch", i, int(batch.labels[i]), int(batch.scenarios[i]),
                             batch.z_values[i].copy(), batch.e_values[i].copy())
        e = entries[int(pool_k[j - pool_b.size])]
        return Candidate("bank", int(pool_k[j - pool_b.size]), e.label, e.scenario,
                         e.z_snapshot, e.embed_snapshot)

    pos = realize(pos_b, pos_k, int(rng.integers(0, n_pos)))
    take = min(N, n_neg)
    chosen = rng.choice(n_neg, take, replace=False)
    negs = [realize(neg_b, neg_k, int(c)) for c in chosen]
    return ContrastiveSet(anchor=anchor, positive=pos, negatives=negs)


def diffused_count(n_selected: int) -> int:
    """Synthetic negatives per anchor: ceil of half the selected count."""
    return (n_selected + 1) // 2


def add_diffused_negatives(cset: ContrastiveSet, schedule: DiffusionSchedule,
                           count: int, rng: RngStream) -> ContrastiveSet:
    """Append `count` diffused variants of the selected negatives.

    Each variant draws a source negative uniformly (with replacement), a
    step t uniform on [1, T], and fresh noise, in that order.  The variant
    keeps its source's label, scenario, and weighting embedding; its vector
    is a constant.
    """
    sources = [c for c in cset.negatives if c.provenance != "diffused"]
    if not sources:
        raise ContractError("no source negatives to diffuse")
    for _ in range(count):
        src_i = int(rng.integers(0, len(sources)))
        src = sources[src_i]
        t = int(rng.integers(1, schedule.T + 1))
        z_t = diffuse(src.z_value, t, schedule, rng=rng)
        cset.negatives.append(Candidate(
            "diffused", -1, src.label, src.scenario, z_t, src.embed_snapshot,
            t=t, source_provenance=src.provenance, source_index=src.index))
    return cset
