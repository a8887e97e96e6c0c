"""Joint training loop: main loss plus both contrastive terms, Adam, and
per-scenario evaluation.

Each stochastic phase draws from its own per-step substream, so turning one
loss off never changes another phase's draws.  Sampling decisions are made
in a planning pass (which realizes every constant: weights, diffused
vectors, candidate indices); the graph is then assembled from parameters
plus the plan, which keeps the composite loss a deterministic function of
the parameters.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist
from scipy.stats import rankdata

from . import autodiff as ad
from .autodiff import DiffNode
from .data import Dataset, batch_iter
from .errors import ConfigError, ContractError, DataError, DimensionError, NumericError
from .losses import reciprocal_weight
from .model import (BatchForward, ModelDims, ModelParams, Sample, forward_arrays,
                    forward_batch, init_params)
from .rng import RngStream
from .sampling import (BatchView, MemoryBank, MemoryBankEntry, add_diffused_negatives,
                       assign_clusters, build_schedule, diffused_count, kmeans_fit,
                       select_contrastive)

KMEANS_ITERS = 10

ABLATION_FLAGS = {
    "g-loss": "g_loss",
    "noise": "noise",
    "weight": "weight",
    "s-loss": "s_loss",
}


@dataclass(frozen=True)
class TrainConfig:
    """Every knob of the joint objective and its optimizer.

    Defaults are desk scale; the documented production settings are lr 0.001
    with batch 2048.  diffused_per_anchor 0 means ceil(selected/2).
    """
    tau: float = 0.1
    lambda1: float = 0.1
    lambda2: float = 0.1
    lr: float = 0.001
    batch_size: int = 256
    epochs: int = 5
    negatives: int = 8
    bank_capacity: int = 2048
    clusters: int = 8
    refresh: int = 200
    diff_steps: int = 50
    beta_start: float = 1e-4
    beta_end: float = 0.02
    dropout: float = 0.1
    g_loss: bool = True
    noise: bool = True
    weight: bool = True
    s_loss: bool = True
    fine: bool = True
    log_form: bool = True
    seed: int = 0
    diffused_per_anchor: int = 0
    embed_dim: int = 8
    shared_dims: tuple[int, ...] = (64, 64)
    specific_dims: tuple[int, ...] = (32, 32)

    def __post_init__(self):
        checks = [
            (self.tau > 0, f"tau must be > 0, got {self.tau}"),
            (self.lambda1 >= 0, f"lambda1 must be >= 0, got {self.lambda1}"),
            (self.lambda2 >= 0, f"lambda2 must be >= 0, got {self.lambda2}"),
            (self.lr > 0, f"learning rate must be > 0, got {self.lr}"),
            (self.batch_size >= 2, f"batch size must be >= 2, got {self.batch_size}"),
            (self.epochs >= 0, f"epochs must be >= 0, got {self.epochs}"),
            (self.negatives >= 1, f"negatives must be >= 1, got {self.negatives}"),
            (self.bank_capacity >= 1,
             f"bank capacity must be >= 1, got {self.bank_capacity}"),
            (self.clusters >= 1, f"cluster count must be >= 1, got {self.clusters}"),
            (self.refresh >= 1, f"refresh interval must be >= 1, got {self.refresh}"),
            (self.diff_steps >= 1, f"diffusion steps must be >= 1, got {self.diff_steps}"),
            (0.0 < self.beta_start <= self.beta_end < 1.0,
             f"need 0 < beta_start <= beta_end < 1, got ({self.beta_start}, {self.beta_end})"),
            (0.0 <= self.dropout < 1.0,
             f"dropout rate must be in [0, 1), got {self.dropout}"),
            (self.diffused_per_anchor >= 0,
             f"diffused_per_anchor must be >= 0, got {self.diffused_per_anchor}"),
            (self.embed_dim >= 1, f"embed_dim must be >= 1, got {self.embed_dim}"),
            (len(self.shared_dims) >= 1 and all(w >= 1 for w in self.shared_dims),
             "shared_dims must list positive widths"),
            (len(self.specific_dims) >= 1 and all(w >= 1 for w in self.specific_dims),
             "specific_dims must list positive widths"),
            (isinstance(self.seed, int) and 0 <= self.seed < 2**64,
             f"seed must be a non-negative 64-bit integer, got {self.seed}"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def model_dims(self) -> ModelDims:
        return ModelDims(self.embed_dim, tuple(self.shared_dims),
                         tuple(self.specific_dims))

    @property
    def g_active(self) -> bool:
        return self.g_loss and self.lambda1 > 0.0

    @property
    def s_active(self) -> bool:
        return self.s_loss and self.lambda2 > 0.0


@dataclass
class TrainState:
    """Mutable loop state: bank, schedule, rng root, centroids, step index."""
    bank: MemoryBank
    schedule: object
    root: RngStream
    centroids: np.ndarray | None = None
    step: int = 0


@dataclass(frozen=True)
class MetricsRow:
    """One evaluation line; scenario -1 aggregates the whole split."""
    epoch: int
    scenario: int
    auc: float | None
    loss_main: float
    loss_g: float
    loss_s: float
    skipped: int


METRICS_HEADER = "epoch,scenario,auc,loss_main,loss_g,loss_s,skipped"


def format_metrics(rows: list[MetricsRow]) -> str:
    lines = [METRICS_HEADER]
    for r in rows:
        auc_s = "nan" if r.auc is None else f"{r.auc:.6f}"
        lines.append(f"{r.epoch},{r.scenario},{auc_s},{r.loss_main:.6f},"
                     f"{r.loss_g:.6f},{r.loss_s:.6f},{r.skipped}")
    return "\n".join(lines) + "\n"


def write_metrics(path, rows: list[MetricsRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_metrics(rows))


# ---------------------------------------------------------------------------
# metrics primitives
# ---------------------------------------------------------------------------

def auc(scores, labels) -> float | None:
    """Probability a random positive outranks a random negative, ties 0.5.

    Computed from rank sums; returns None when only one class is present
    (the metric is undefined, not zero).
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise DimensionError(f"scores {s.shape} and labels {y.shape} must be "
                             "equal-length vectors")
    if not np.isin(y, (0, 1)).all():
        raise ContractError("labels must be 0 or 1")
    n_pos = int((y == 1).sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(s)
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def uniformity(reprs) -> float:
    """ln mean over distinct pairs of exp(-2 ||zi - zj||^2) on unit vectors.

    Lower is more uniform.  Zero-norm vectors are skipped with a warning.
    """
    Z = np.asarray(reprs, dtype=float)
    if Z.ndim != 2 or Z.shape[0] < 2:
        raise ContractError("uniformity needs at least 2 vectors")
    norms = np.linalg.norm(Z, axis=1)
    keep = norms > 0.0
    skipped = int((~keep).sum())
    if skipped:
        warnings.warn(f"uniformity: skipped {skipped} zero-norm vectors",
                      stacklevel=2)
    Z = Z[keep] / norms[keep, None]
    if Z.shape[0] < 2:
        raise ContractError("uniformity: fewer than 2 non-zero vectors")
    d2 = pdist(Z, "sqeuclidean")
    return float(np.log(np.exp(-2.0 * d2).mean()))


class Adam:
    """Standard Adam with bias correction over named parameters."""

    def __init__(self, named_params, lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ConfigError(f"learning rate must be > 0, got {lr}")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ConfigError(f"betas must be in [0, 1), got ({beta1}, {beta2})")
        self.items = list(named_params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {name: np.zeros_like(node.value) for name, node in self.items}
        self.v = {name: np.zeros_like(node.value) for name, node in self.items}
        self.t = 0

    def step(self, grads: dict) -> None:
        """Apply one update; parameters absent from grads get zero gradient."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, node in self.items:
            g = grads.get(node)
            if g is None:
                g = np.zeros_like(node.value)
            elif not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient for parameter {name}")
            m = self.m[name] = b1 * self.m[name] + (1 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            node.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# step planning: realize all random choices as constants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlannedCandidate:
    """A candidate pinned for assembly: a live batch row or a constant vector."""
    batch_index: int            # >= 0 when the representation is a graph node
    z_const: np.ndarray | None  # set for bank and diffused entries
    weight: float


@dataclass(frozen=True)
class PlannedAnchor:
    anchor: int
    positive: PlannedCandidate
    negatives: tuple[PlannedCandidate, ...]


@dataclass(frozen=True)
class PlannedTriple:
    anchor: int
    other_rows: tuple[int, ...]
    cross_rows: tuple[int, ...]
    cross_towers: tuple[int, ...]


@dataclass
class StepPlan:
    step: int
    g_anchors: list[PlannedAnchor] = field(default_factory=list)
    s_triples: list[PlannedTriple] = field(default_factory=list)
    skipped: dict[int, int] = field(default_factory=dict)

    def _skip(self, scenario: int) -> None:
        self.skipped[scenario] = self.skipped.get(scenario, 0) + 1


def _pin_candidate(cand, weight: float) -> PlannedCandidate:
    if cand.provenance == "batch":
        return PlannedCandidate(cand.index, None, weight)
    return PlannedCandidate(-1, cand.z_value, weight)


def plan_step(cfg: TrainConfig, state: TrainState, view: BatchView) -> StepPlan:
    """Consume this step's sampling substreams and pin every random choice.

    The plan holds indices into the batch (live nodes at assembly) and
    realized constants (bank vectors, diffused vectors, weights), so
    assembling it twice against any parameter values is deterministic.
    """
    plan = StepPlan(step=state.step)
    B = len(view)
    if cfg.g_active:
        rng_g = state.root.substream(f"sample-g/{state.step}")
        rng_d = state.root.substream(f"diffusion/{state.step}")
        fine_on = cfg.fine and state.centroids is not None
        for i in range(B):
            cset = select_contrastive(i, view, state.bank, cfg.negatives,
                                      fine_on, state.centroids, rng_g)
            if cset is None:
                plan._skip(int(view.scenarios[i]))
                continue
            if cfg.noise:
                count = cfg.diffused_per_anchor or diffused_count(len(cset.negatives))
                add_diffused_negatives(cset, state.schedule, count, rng_d)
            anchor_e = view.e_values[i]
            if cfg.weight:
                pos = _pin_candidate(cset.positive,
                                     reciprocal_weight(anchor_e,
                                                       cset.positive.embed_snapshot))
                negs = tuple(_pin_candidate(c, reciprocal_weight(anchor_e,
                                                                 c.embed_snapshot))
                             for c in cset.negatives)
            else:
                pos = _pin_candidate(cset.positive, 1.0)
                negs = tuple(_pin_candidate(c, 1.0) for c in cset.negatives)
            plan.g_anchors.append(PlannedAnchor(i, pos, negs))
    if cfg.s_active:
        rng_s = state.root.substream(f"sample-s/{state.step}")
        K = int(view.scenarios.max()) + 1 if B else 0
        for i in range(B):
            k = int(view.scenarios[i])
            others = np.flatnonzero(view.scenarios != k)
            within = np.flatnonzero(view.scenarios == k)
            within = within[within != i]
            n = min(cfg.negatives, others.size, within.size)
            n_towers = max(K - 1, 0)
            if n == 0 or n_towers == 0:
                plan._skip(k)
                continue
            o_rows = others[rng_s.choice(others.size, n, replace=False)]
            c_rows = within[rng_s.choice(within.size, n, replace=False)]
            draws = rng_s.integers(0, n_towers, n)
            towers = tuple(int(d) if d < k else int(d) + 1 for d in draws)
            plan.s_triples.append(PlannedTriple(
                i, tuple(int(r) for r in o_rows), tuple(int(r) for r in c_rows),
                towers))
    return plan


# ---------------------------------------------------------------------------
# graph assembly from a pinned plan
# ---------------------------------------------------------------------------

@dataclass
class StepLoss:
    total: DiffNode
    fwd: BatchForward
    main_value: float
    g_values: list[tuple[int, float]]   # (scenario, per-anchor loss)
    s_values: list[tuple[int, float]]
    skipped: dict[int, int]


def _row_contrast(dots: DiffNode, weights: np.ndarray, tau: float,
                  log_form: bool) -> DiffNode:
    """Softmax contrast over a 1 x m dot row whose first column is the positive.

    The denominator is a max-shifted log-sum-exp and the numerator enters in
    log space directly, so values and gradients stay finite for any dots.
    """
    shift = float(dots.value.max()) / tau
    e = ad.exp(ad.affine(dots, 1.0 / tau, -shift))
    log_den = ad.affine(ad.log(ad.sum_all(ad.affine(e, weights))), 1.0, shift)
    log_num = ad.affine(ad.pick(dots, 0, 0), 1.0 / tau, float(np.log(weights[0, 0])))
    if log_form:
        return ad.sub(log_den, log_num)
    return ad.neg(ad.exp(ad.sub(log_num, log_den)))


def assemble_step(cfg: TrainConfig, params: ModelParams, batch: list[Sample],
                  plan: StepPlan, dropout_rng: RngStream) -> StepLoss:
    """Build the joint loss graph for a pinned plan.

    Dropout masks come from the passed stream, so recreating the same
    substream replays the identical graph for any parameter values.
    """
    fwd = forward_batch(batch, params)
    parts = [fwd.main]
    g_values: list[tuple[int, float]] = []
    s_values: list[tuple[int, float]] = []

    if plan.g_anchors:
        terms = []
        for pa in plan.g_anchors:
            cands = [pa.positive] + list(pa.negatives)
            rows = [ad.take_row(fwd.shared, c.batch_index) if c.batch_index >= 0
                    else DiffNode.constant(c.z_const) for c in cands]
            dots = ad.matmul(fwd.anchor_z(pa.anchor), ad.transpose(ad.concat_rows(rows)))
            weights = np.array([[c.weight for c in cands]])
            term = _row_contrast(dots, weights, cfg.tau, cfg.log_form)
            g_values.append((batch[pa.anchor].scenario, term.item()))
            terms.append(term)
        mean_g = ad.affine(ad.add_n(terms), 1.0 / len(terms))
        parts.append(ad.affine(mean_g, cfg.lambda1))

    if plan.s_triples:
        aug_out = {}
        for k in sorted(fwd.scenario_rows):
            t = ad.take_rows(fwd.shared, fwd.scenario_rows[k])
            for w, b in params.specific_layers[k]:
                t = ad.relu(ad.add_rowvec(ad.matmul(t, w), b))
                if cfg.dropout > 0.0:
                    t = ad.dropout(t, cfg.dropout, dropout_rng)
            aug_out[k] = t

        by_tower: dict[int, list[int]] = {}
        for tr in plan.s_triples:
            for row, kp in zip(tr.cross_rows, tr.cross_towers):
                by_tower.setdefault(kp, []).append(row)
        cross_nodes: dict[tuple[int, int], DiffNode] = {}
        for kp in sorted(by_tower):
            rows = sorted(set(by_tower[kp]))
            t = ad.take_rows(fwd.shared, rows)
            for w, b in params.specific_layers[kp]:
                t = ad.relu(ad.add_rowvec(ad.matmul(t, w), b))
            for pos_i, row in enumerate(rows):
                cross_nodes[(kp, row)] = ad.take_row(t, pos_i)

        terms = []
        for tr in plan.s_triples:
            k = batch[tr.anchor].scenario
            h = fwd.anchor_h(tr.anchor)
            h_aug = ad.take_row(aug_out[k], fwd.row_in_tower[tr.anchor])
            rows = [h_aug]
            rows += [fwd.anchor_h(j) for j in tr.other_rows]
            rows += [cross_nodes[(kp, j)] for j, kp in zip(tr.cross_rows,
                                                           tr.cross_towers)]
            dots = ad.matmul(h, ad.transpose(ad.concat_rows(rows)))
            term = _row_contrast(dots, np.ones((1, len(rows))), cfg.tau, cfg.log_form)
            s_values.append((k, term.item()))
            terms.append(term)
        mean_s = ad.affine(ad.add_n(terms), 1.0 / len(terms))
        parts.append(ad.affine(mean_s, cfg.lambda2))

    total = parts[0] if len(parts) == 1 else ad.add_n(parts)
    return StepLoss(total, fwd, fwd.main.item(), g_values, s_values,
                    dict(plan.skipped))


def _check_finite(sl: StepLoss) -> None:
    if np.isfinite(sl.total.value).all():
        return
    g = float(np.mean([v for _, v in sl.g_values])) if sl.g_values else 0.0
    s = float(np.mean([v for _, v in sl.s_values])) if sl.s_values else 0.0
    raise NumericError(f"non-finite loss: main={sl.main_value!r} "
                       f"g={g!r} s={s!r}")


def _batch_view(params: ModelParams, batch: list[Sample],
                centroids) -> BatchView:
    e_np, z_np, _, _ = forward_arrays(params, batch)
    labels = np.asarray([s.label for s in batch], dtype=np.intp)
    scens = np.asarray([s.scenario for s in batch], dtype=np.intp)
    if centroids is not None:
        clusters = assign_clusters(e_np, centroids)
    else:
        clusters = np.zeros(len(batch), dtype=np.intp)
    return BatchView(labels, scens, clusters, z_np, e_np)


def total_loss(batch: list[Sample], params: ModelParams, state: TrainState,
               cfg: TrainConfig) -> DiffNode:
    """The joint objective for one batch: L_main + lam1 Lg + lam2 Ls.

    A term whose flag is off (or whose coefficient is zero) is skipped
    entirely: no graph, no draws from its substreams.  Calling this twice
    with the same state replays the identical graph.
    """
    view = _batch_view(params, batch, state.centroids)
    plan = plan_step(cfg, state, view)
    sl = assemble_step(cfg, params, batch, plan,
                       state.root.substream(f"dropout/{state.step}"))
    _check_finite(sl)
    return sl.total


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

class _EpochStats:
    def __init__(self, n_scenarios: int):
        K = n_scenarios
        self.main_sum = np.zeros(K)
        self.main_n = np.zeros(K, dtype=int)
        self.g_sum = np.zeros(K)
        self.g_n = np.zeros(K, dtype=int)
        self.s_sum = np.zeros(K)
        self.s_n = np.zeros(K, dtype=int)
        self.skipped = np.zeros(K, dtype=int)

    def merge(self, sl: StepLoss, batch: list[Sample]) -> None:
        for k, rows in sl.fwd.scenario_rows.items():
            yhat = sl.fwd.predictions[k].value.ravel()
            y = np.asarray([batch[i].label for i in rows], dtype=float)
            c = np.clip(yhat, 1e-12, 1.0 - 1e-12)
            bce = -(y * np.log(c) + (1.0 - y) * np.log(1.0 - c))
            self.main_sum[k] += bce.sum()
            self.main_n[k] += len(rows)
        for k, v in sl.g_values:
            self.g_sum[k] += v
            self.g_n[k] += 1
        for k, v in sl.s_values:
            self.s_sum[k] += v
            self.s_n[k] += 1
        for k, c in sl.skipped.items():
            self.skipped[k] += c


def _mean(total: float, count: int) -> float:
    return float(total / count) if count else 0.0


@dataclass
class TrainResult:
    params: ModelParams
    rows: list[MetricsRow]
    uniformity: list[float]     # one value per evaluated epoch (0..epochs)

    def metrics_text(self) -> str:
        return format_metrics(self.rows)


def evaluate(params: ModelParams, dataset: Dataset, epoch: int = 0,
             stats: _EpochStats | None = None) -> tuple[list[MetricsRow], float]:
    """Per-scenario test rows plus the aggregate row and pooled uniformity.

    Loss columns echo the provided training accumulators; with none, they
    are zero (nothing was optimized for these rows).
    """
    K = dataset.schema.n_scenarios
    if stats is None:
        stats = _EpochStats(K)
    rows: list[MetricsRow] = []
    zs = []
    pooled_scores: list[np.ndarray] = []
    pooled_labels: list[int] = []
    for k in range(K):
        samples = dataset.test[k] if k < len(dataset.test) else []
        auc_k = None
        if samples:
            _, z, _, yhat = forward_arrays(params, samples)
            labels = [s.label for s in samples]
            zs.append(z)
            pooled_scores.append(yhat)
            pooled_labels.extend(labels)
            auc_k = auc(yhat, labels)
        rows.append(MetricsRow(epoch, k, auc_k,
                               _mean(stats.main_sum[k], stats.main_n[k]),
                               _mean(stats.g_sum[k], stats.g_n[k]),
                               _mean(stats.s_sum[k], stats.s_n[k]),
                               int(stats.skipped[k])))
    pooled_auc = None
    if pooled_scores:
        pooled_auc = auc(np.concatenate(pooled_scores), pooled_labels)
    rows.append(MetricsRow(epoch, -1, pooled_auc,
                           _mean(stats.main_sum.sum(), stats.main_n.sum()),
                           _mean(stats.g_sum.sum(), stats.g_n.sum()),
                           _mean(stats.s_sum.sum(), stats.s_n.sum()),
                           int(stats.skipped.sum())))
    uni = float("nan")
    if zs:
        Z = np.vstack(zs)
        if Z.shape[0] >= 2:
            try:
                uni = uniformity(Z)
            except ContractError:
                pass
    return rows, uni


def _train_step(cfg: TrainConfig, state: TrainState, params: ModelParams,
                adam: Adam, batch: list[Sample], stats: _EpochStats) -> None:
    e_np, z_np, _, _ = forward_arrays(params, batch)
    if cfg.g_active and cfg.fine and state.step % cfg.refresh == 0:
        bank_e = [entry.embed_snapshot for entry in state.bank]
        points = np.vstack([np.asarray(bank_e), e_np]) if bank_e else e_np
        if points.shape[0] >= cfg.clusters:
            cents, _ = kmeans_fit(points, cfg.clusters, KMEANS_ITERS,
                                  state.root.substream(f"cluster/{state.step}"))
            state.centroids = cents
            if len(state.bank):
                state.bank.reassign_clusters(cents)
    labels = np.asarray([s.label for s in batch], dtype=np.intp)
    scens = np.asarray([s.scenario for s in batch], dtype=np.intp)
    if state.centroids is not None:
        clusters = assign_clusters(e_np, state.centroids)
    else:
        clusters = np.zeros(len(batch), dtype=np.intp)
    view = BatchView(labels, scens, clusters, z_np, e_np)

    plan = plan_step(cfg, state, view)
    sl = assemble_step(cfg, params, batch, plan,
                       state.root.substream(f"dropout/{state.step}"))
    _check_finite(sl)
    grads = ad.backward(sl.total)
    adam.step(grads)

    e_post, z_post, _, _ = forward_arrays(params, batch)
    if state.centroids is not None:
        post_clusters = assign_clusters(e_post, state.centroids)
    else:
        post_clusters = np.zeros(len(batch), dtype=np.intp)
    for i, s in enumerate(batch):
        state.bank.push(MemoryBankEntry(z_post[i].copy(), e_post[i].copy(),
                                        s.label, s.scenario, int(post_clusters[i])))
    stats.merge(sl, batch)
    state.step += 1


def train(dataset: Dataset, cfg: TrainConfig) -> TrainResult:
    """Run the full loop; epoch 0 rows evaluate the untrained model.

    Deterministic given (dataset, cfg): metrics, parameters, and uniformity
    values are reproduced bit for bit.
    """
    schema = dataset.schema
    if schema.n_scenarios < 1:
        raise DataError("training needs at least one scenario")
    if not dataset.all_train():
        raise DataError("training needs a non-empty train split")
    root = RngStream(cfg.seed, "train")
    params = init_params(schema, cfg.model_dims(), root.substream("init"))
    state = TrainState(bank=MemoryBank(cfg.bank_capacity),
                       schedule=build_schedule(cfg.beta_start, cfg.beta_end,
                                               cfg.diff_steps),
                       root=root)
    adam = Adam(params.named_params(), cfg.lr)

    rows, uni = evaluate(params, dataset, epoch=0)
    all_rows = list(rows)
    unis = [uni]
    for epoch in range(1, cfg.epochs + 1):
        stats = _EpochStats(schema.n_scenarios)
        for batch in batch_iter(dataset, cfg.batch_size,
                                root.substream(f"batch/{epoch}")):
            try:
                _train_step(cfg, state, params, adam, batch, stats)
            except NumericError as exc:
                raise NumericError(
                    f"epoch {epoch}, step {state.step}: {exc}") from exc
        rows, uni = evaluate(params, dataset, epoch=epoch, stats=stats)
        all_rows.extend(rows)
        unis.append(uni)
    return TrainResult(params, all_rows, unis)
