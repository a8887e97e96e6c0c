"""Shared-specific ranking backbone.

One embedding layer and one shared MLP serve every scenario; each scenario
owns a tower MLP and a scalar output head.  Forward passes exist in two
forms: per-sample graph ops (the reference path) and batched helpers used
by the trainer, which must agree to float precision.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import DiffNode
from .errors import ContractError, DataError, DimensionError
from .rng import RngStream

MODEL_MAGIC = b"HC2MODEL\x01"


@dataclass(frozen=True)
class Sample:
    """One labeled impression: scenario, binary label, categorical feature ids."""
    scenario: int
    label: int
    features: tuple[int, ...]


@dataclass(frozen=True)
class Schema:
    """Dataset shape: scenario count, field count, per-field vocabulary sizes."""
    n_scenarios: int
    n_fields: int
    vocab_sizes: tuple[int, ...]

    def validate_sample(self, sample: Sample) -> None:
        if len(sample.features) != self.n_fields:
            raise DataError(
                f"sample has {len(sample.features)} features, schema expects {self.n_fields}")
        if not (0 <= sample.scenario < self.n_scenarios):
            raise DataError(f"scenario {sample.scenario} outside [0, {self.n_scenarios})")
        if sample.label not in (0, 1):
            raise DataError(f"label must be 0 or 1, got {sample.label}")
        for f_idx, fid in enumerate(sample.features):
            if not (0 <= fid < self.vocab_sizes[f_idx]):
                raise DataError(
                    f"feature id {fid} out of vocabulary for field {f_idx} "
                    f"(size {self.vocab_sizes[f_idx]})")


@dataclass(frozen=True)
class ModelDims:
    """Layer widths; embedding width is per field."""
    embed_dim: int = 8
    shared: tuple[int, ...] = (64, 64)
    specific: tuple[int, ...] = (32, 32)


@dataclass
class ModelParams:
    """All learned parameters.

    Towers share layer shapes across scenarios and differ only in values;
    each scenario also owns a scalar output head.
    """
    schema: Schema
    dims: ModelDims
    embed_tables: list[DiffNode] = field(default_factory=list)
    shared_layers: list[tuple[DiffNode, DiffNode]] = field(default_factory=list)
    specific_layers: list[list[tuple[DiffNode, DiffNode]]] = field(default_factory=list)
    heads: list[tuple[DiffNode, DiffNode]] = field(default_factory=list)

    @property
    def embed_width(self) -> int:
        return self.schema.n_fields * self.dims.embed_dim

    @property
    def shared_width(self) -> int:
        return self.dims.shared[-1]

    def named_params(self):
        """Yield (name, node) in fixed declaration order."""
        for f_idx, table in enumerate(self.embed_tables):
            yield f"embed.{f_idx}", table
        for li, (w, b) in enumerate(self.shared_layers):
            yield f"shared.{li}.w", w
            yield f"shared.{li}.b", b
        for k, tower in enumerate(self.specific_layers):
            for li, (w, b) in enumerate(tower):
                yield f"tower.{k}.{li}.w", w
                yield f"tower.{k}.{li}.b", b
        for k, (w, b) in enumerate(self.heads):
            yield f"head.{k}.w", w
            yield f"head.{k}.b", b


def _xavier(rng: RngStream, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(shape) * 2.0 * limit - limit


def init_params(schema: Schema, dims: ModelDims, rng: RngStream) -> ModelParams:
    """Fan-scaled uniform initialization; biases start at zero."""
    p = ModelParams(schema=schema, dims=dims)
    for vocab in schema.vocab_sizes:
        p.embed_tables.append(DiffNode.param(_xavier(rng, vocab, dims.embed_dim,
                                                     (vocab, dims.embed_dim))))
    width = schema.n_fields * dims.embed_dim
    for out_w in dims.shared:
        w = DiffNode.param(_xavier(rng, width, out_w, (width, out_w)))
        b = DiffNode.param(np.zeros((1, out_w)))
        p.shared_layers.append((w, b))
        width = out_w
    for _ in range(schema.n_scenarios):
        tower = []
        t_width = width
        for out_w in dims.specific:
            w = DiffNode.param(_xavier(rng, t_width, out_w, (t_width, out_w)))
            b = DiffNode.param(np.zeros((1, out_w)))
            tower.append((w, b))
            t_width = out_w
        p.specific_layers.append(tower)
        p.heads.append((DiffNode.param(_xavier(rng, t_width, 1, (t_width, 1))),
                        DiffNode.param(np.zeros((1, 1)))))
    return p


# ---------------------------------------------------------------------------
# per-sample forward (reference path)
# ---------------------------------------------------------------------------

def embed(sample: Sample, params: ModelParams) -> DiffNode:
    """Concatenate, in field order, the embedding row of each feature id."""
    params.schema.validate_sample(sample)
    rows = [ad.take_row(params.embed_tables[f_idx], fid)
            for f_idx, fid in enumerate(sample.features)]
    return ad.concat_cols(rows)


def shared_forward(e: DiffNode, params: ModelParams) -> DiffNode:
    """Shared MLP producing the representation used by every scenario."""
    if e.value.shape[1] != params.embed_width:
        raise DimensionError(
            f"embedding width {e.value.shape[1]} does not match shared input {params.embed_width}")
    x = e
    for w, b in params.shared_layers:
        x = ad.relu(ad.add_rowvec(ad.matmul(x, w), b))
    return x


def specific_forward(k: int, z: DiffNode, params: ModelParams,
                     dropout_rate: float = 0.0, rng: RngStream | None = None) -> DiffNode:
    """Scenario tower, with a dropout module after each layer's activation.

    rate 0 disables dropout; rate > 0 is used to produce augmented views.
    """
    if not (0 <= k < params.schema.n_scenarios):
        raise ContractError(f"scenario {k} outside [0, {params.schema.n_scenarios})")
    x = z
    for w, b in params.specific_layers[k]:
        x = ad.relu(ad.add_rowvec(ad.matmul(x, w), b))
        if dropout_rate > 0.0:
            x = ad.dropout(x, dropout_rate, rng)
    return x


def predict(h: DiffNode, k: int, params: ModelParams) -> DiffNode:
    """Scalar behavior probability from tower output h."""
    w, b = params.heads[k]
    return ad.sigmoid(ad.add(ad.matmul(h, w), b))


def bce_term(yhat: DiffNode, label: int) -> DiffNode:
    """Cross entropy of one prediction, with yhat clamped away from {0, 1}."""
    c = ad.clip(yhat, 1e-12, 1.0 - 1e-12)
    if label == 1:
        return ad.neg(ad.log(c))
    return ad.neg(ad.log(ad.affine(c, -1.0, 1.0)))


def main_loss(batch: list[Sample], params: ModelParams) -> DiffNode:
    """Mean cross entropy over a mixed-scenario batch, one tower per sample."""
    if not batch:
        raise ContractError("main_loss needs a non-empty batch")
    terms = []
    for sample in batch:
        e = embed(sample, params)
        z = shared_forward(e, params)
        h = specific_forward(sample.scenario, z, params)
        terms.append(bce_term(predict(h, sample.scenario, params), sample.label))
    return ad.affine(ad.add_n(terms), 1.0 / len(batch))


# ---------------------------------------------------------------------------
# batched forward (trainer path)
# ---------------------------------------------------------------------------

@dataclass
class BatchForward:
    """Graph nodes for a whole batch plus the index bookkeeping.

    `scenario_rows[k]` lists batch positions routed to tower k, and
    `row_in_tower[i]` is position i's row inside its tower's output.
    """
    samples: list[Sample]
    embeddings: DiffNode              # B x embed_width
    shared: DiffNode                  # B x shared_width
    scenario_rows: dict[int, list[int]]
    row_in_tower: list[int]
    tower_out: dict[int, DiffNode]    # k -> B_k x tower_width
    predictions: dict[int, DiffNode]  # k -> B_k x 1
    main: DiffNode                    # 1 x 1

    def anchor_z(self, i: int) -> DiffNode:
        return ad.take_row(self.shared, i)

    def anchor_h(self, i: int) -> DiffNode:
        k = self.samples[i].scenario
        return ad.take_row(self.tower_out[k], self.row_in_tower[i])


def forward_batch(batch: list[Sample], params: ModelParams) -> BatchForward:
    """Vectorized forward pass; numerically equal to the per-sample path."""
    if not batch:
        raise ContractError("forward_batch needs a non-empty batch")
    for sample in batch:
        params.schema.validate_sample(sample)
    ids = np.asarray([s.features for s in batch], dtype=np.intp)
    cols = [ad.take_rows(params.embed_tables[f_idx], ids[:, f_idx])
            for f_idx in range(params.schema.n_fields)]
    emb = ad.concat_cols(cols)
    x = emb
    for w, b in params.shared_layers:
        x = ad.relu(ad.add_rowvec(ad.matmul(x, w), b))
    shared = x

    scenario_rows: dict[int, list[int]] = {}
    row_in_tower = [0] * len(batch)
    for i, sample in enumerate(batch):
        rows = scenario_rows.setdefault(sample.scenario, [])
        row_in_tower[i] = len(rows)
        rows.append(i)

    tower_out: dict[int, DiffNode] = {}
    predictions: dict[int, DiffNode] = {}
    loss_sums = []
    for k, rows in scenario_rows.items():
        t = ad.take_rows(shared, rows)
        for w, b in params.specific_layers[k]:
            t = ad.relu(ad.add_rowvec(ad.matmul(t, w), b))
        tower_out[k] = t
        w, b = params.heads[k]
        yhat = ad.sigmoid(ad.add_rowvec(ad.matmul(t, w), b))
        predictions[k] = yhat
        y = np.array([[float(batch[i].label)] for i in rows])
        c = ad.clip(yhat, 1e-12, 1.0 - 1e-12)
        pos = ad.affine(ad.log(c), y)
        negt = ad.affine(ad.log(ad.affine(c, -1.0, 1.0)), 1.0 - y)
        loss_sums.append(ad.neg(ad.sum_all(ad.add(pos, negt))))
    main = ad.affine(ad.add_n(loss_sums), 1.0 / len(batch))
    return BatchForward(batch, emb, shared, scenario_rows, row_in_tower,
                        tower_out, predictions, main)


def forward_arrays(params: ModelParams, samples: list[Sample]):
    """Plain-numpy forward with dropout off, for evaluation and snapshots.

    Returns (embeddings, shared reps, tower reps, probabilities) aligned to
    `samples`; no graph is built.
    """
    if not samples:
        d = params.embed_width
        return (np.zeros((0, d)), np.zeros((0, params.shared_width)),
                np.zeros((0, params.dims.specific[-1])), np.zeros(0))
    ids = np.asarray([s.features for s in samples], dtype=np.intp)
    emb = np.hstack([params.embed_tables[f_idx].value[ids[:, f_idx]]
                     for f_idx in range(params.schema.n_fields)])
    z = emb
    for w, b in params.shared_layers:
        z = np.maximum(z @ w.value + b.value, 0.0)
    h = np.zeros((len(samples), params.dims.specific[-1]))
    yhat = np.zeros(len(samples))
    scen = np.asarray([s.scenario for s in samples])
    for k in np.unique(scen):
        rows = np.flatnonzero(scen == k)
        t = z[rows]
        for w, b in params.specific_layers[k]:
            t = np.maximum(t @ w.value + b.value, 0.0)
        h[rows] = t
        w, b = params.heads[k]
        logit = (t @ w.value + b.value).ravel()
        pos = logit >= 0
        ez = np.exp(np.where(pos, -logit, logit))
        yhat[rows] = np.where(pos, 1.0 / (1.0 + ez), ez / (1.0 + ez))
    return emb, z, h, yhat


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def save_model(path, params: ModelParams) -> None:
    """Binary model file: magic, JSON schema block, float64 little-endian data."""
    header = {
        "n_scenarios": params.schema.n_scenarios,
        "n_fields": params.schema.n_fields,
        "vocab_sizes": list(params.schema.vocab_sizes),
        "embed_dim": params.dims.embed_dim,
        "shared": list(params.dims.shared),
        "specific": list(params.dims.specific),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, node in params.named_params():
            fh.write(node.value.astype("<f8").tobytes())


def load_model(path) -> ModelParams:
    with open(path, "rb") as fh:
        magic = fh.read(len(MODEL_MAGIC))
        if magic != MODEL_MAGIC:
            raise DataError(f"not a model file: bad magic {magic!r}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        schema = Schema(header["n_scenarios"], header["n_fields"],
                        tuple(header["vocab_sizes"]))
        dims = ModelDims(header["embed_dim"], tuple(header["shared"]),
                         tuple(header["specific"]))
        params = init_params(schema, dims, RngStream(0, "load-placeholder"))
        for name, node in params.named_params():
            raw = fh.read(node.value.size * 8)
            if len(raw) != node.value.size * 8:
                raise DataError(f"model file truncated at parameter {name}")
            node.value[...] = np.frombuffer(raw, dtype="<f8").reshape(node.value.shape)
        if fh.read(1):
            raise DataError("model file has trailing bytes")
    return params
