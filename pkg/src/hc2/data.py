"""Dataset ingestion, synthesis, and batching.

The on-disk format is a plain integer CSV: header `scenario,label,f0,...`,
one sample per line, newline-terminated, no quoting.  The synthetic
generator plants a shared signal and a per-scenario signal over one-hot
features so that cross-scenario transfer has a knowable ground truth.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ConfigError, DataError
from .model import Sample, Schema
from .rng import RngStream


@dataclass
class Dataset:
    """Per-scenario train/test partitions under one schema."""
    schema: Schema
    train: list[list[Sample]] = field(default_factory=list)
    test: list[list[Sample]] = field(default_factory=list)

    def __post_init__(self):
        for parts in (self.train, self.test):
            for group in parts:
                for s in group:
                    self.schema.validate_sample(s)

    def all_train(self) -> list[Sample]:
        return [s for group in self.train for s in group]

    def all_test(self) -> list[Sample]:
        return [s for group in self.test for s in group]


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------

def _parse_int(text: str, what: str, line_no: int) -> int:
    try:
        return int(text)
    except ValueError:
        raise DataError(f"line {line_no}: {what} is not an integer: {text!r}") from None


def load_csv(path) -> Dataset:
    """Read one sample file; every sample lands in the train partition.

    F comes from the header; K and vocab sizes are max observed plus one.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DataError(f"{path}: missing header line")
    header = lines[0].split(",")
    if len(header) < 3 or header[0] != "scenario" or header[1] != "label" or \
            any(h != f"f{i}" for i, h in enumerate(header[2:])):
        raise DataError(f"{path}: bad header {lines[0]!r}, "
                        "expected scenario,label,f0,...")
    n_fields = len(header) - 2

    samples: list[Sample] = []
    for line_no, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != n_fields + 2:
            raise DataError(f"line {line_no}: expected {n_fields + 2} values, "
                            f"got {len(cells)}")
        scen = _parse_int(cells[0], "scenario", line_no)
        label = _parse_int(cells[1], "label", line_no)
        feats = tuple(_parse_int(c, f"field f{i}", line_no)
                      for i, c in enumerate(cells[2:]))
        if scen < 0:
            raise DataError(f"line {line_no}: scenario must be >= 0, got {scen}")
        if label not in (0, 1):
            raise DataError(f"line {line_no}: label must be 0 or 1, got {label}")
        for i, fid in enumerate(feats):
            if fid < 0:
                raise DataError(f"line {line_no}: field f{i} must be >= 0, got {fid}")
        samples.append(Sample(scen, label, feats))

    if not samples:
        warnings.warn(f"{path}: no samples after header", stacklevel=2)
        schema = Schema(0, n_fields, (0,) * n_fields)
        return Dataset(schema, [], [])
    n_scen = max(s.scenario for s in samples) + 1
    vocabs = tuple(max(s.features[i] for s in samples) + 1 for i in range(n_fields))
    schema = Schema(n_scen, n_fields, vocabs)
    train = [[] for _ in range(n_scen)]
    for s in samples:
        train[s.scenario].append(s)
    return Dataset(schema, train, [[] for _ in range(n_scen)])


def write_csv(path, samples, n_fields: int) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("scenario,label," + ",".join(f"f{i}" for i in range(n_fields)) + "\n")
        for s in samples:
            if len(s.features) != n_fields:
                raise DataError(f"sample has {len(s.features)} features, "
                                f"file expects {n_fields}")
            fh.write(f"{s.scenario},{s.label}," + ",".join(map(str, s.features)) + "\n")


def load_dataset(path) -> Dataset:
    """Accept either one CSV (all train) or a directory with train.csv/test.csv."""
    if os.path.isdir(path):
        train_ds = load_csv(os.path.join(path, "train.csv"))
        test_ds = load_csv(os.path.join(path, "test.csv"))
        n_fields = train_ds.schema.n_fields
        if test_ds.schema.n_fields != n_fields:
            raise DataError(f"{path}: train has {n_fields} fields, "
                            f"test has {test_ds.schema.n_fields}")
        n_scen = max(train_ds.schema.n_scenarios, test_ds.schema.n_scenarios)
        vocabs = tuple(max(a, b) for a, b in zip(
            train_ds.schema.vocab_sizes + (0,) * n_fields,
            test_ds.schema.vocab_sizes + (0,) * n_fields))[:n_fields]
        schema = Schema(n_scen, n_fields, vocabs)
        pad = lambda parts: parts + [[] for _ in range(n_scen - len(parts))]
        return Dataset(schema, pad(train_ds.train), pad(test_ds.train))
    return load_csv(path)


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    """Knobs for the planted-signal generator.

    counts are per-scenario totals before the 80/20 split; a small count
    makes that scenario sparse.
    """
    n_scenarios: int = 3
    n_fields: int = 4
    vocab_sizes: tuple[int, ...] = (20, 20, 20, 20)
    a_shared: float = 3.0
    a_spec: float = 2.0
    counts: tuple[int, ...] = (2000, 2000, 200)
    noise_rate: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.n_scenarios < 1 or self.n_fields < 1:
            raise ConfigError("need at least one scenario and one field")
        if len(self.vocab_sizes) != self.n_fields:
            raise ConfigError(f"{len(self.vocab_sizes)} vocab sizes for "
                              f"{self.n_fields} fields")
        if any(v < 1 for v in self.vocab_sizes):
            raise ConfigError("vocab sizes must be >= 1")
        if len(self.counts) != self.n_scenarios:
            raise ConfigError(f"{len(self.counts)} counts for "
                              f"{self.n_scenarios} scenarios")
        if any(c < 1 for c in self.counts):
            raise ConfigError("per-scenario counts must be >= 1")
        if self.a_shared < 0 or self.a_spec < 0:
            raise ConfigError("signal strengths must be >= 0")
        if not (0.0 <= self.noise_rate < 0.5):
            raise ConfigError(f"noise rate must be in [0, 0.5), got {self.noise_rate}")


def _draw_weights(rng: RngStream, vocab_sizes) -> list[np.ndarray]:
    # entry scale 1/sqrt(F) keeps the summed logit near unit variance
    scale = 1.0 / np.sqrt(len(vocab_sizes))
    return [rng.normal(v) * scale for v in vocab_sizes]


def synth_generate(cfg: SynthConfig) -> Dataset:
    """Plant shared and per-scenario signals, draw labels, split 80/20.

    Scenario k's samples depend only on the shared weights and scenario k's
    own substreams, so editing one scenario never perturbs another.
    """
    root = RngStream(cfg.seed, "synth")
    w_shared = _draw_weights(root.substream("shared-weights"), cfg.vocab_sizes)
    schema = Schema(cfg.n_scenarios, cfg.n_fields, tuple(cfg.vocab_sizes))
    train: list[list[Sample]] = []
    test: list[list[Sample]] = []
    for k in range(cfg.n_scenarios):
        w_k = _draw_weights(root.substream(f"scenario-weights/{k}"), cfg.vocab_sizes)
        draw = root.substream(f"scenario-data/{k}")
        n = cfg.counts[k]
        ids = np.empty((n, cfg.n_fields), dtype=np.intp)
        for f in range(cfg.n_fields):
            ids[:, f] = draw.integers(0, cfg.vocab_sizes[f], n)
        logit = np.zeros(n)
        for f in range(cfg.n_fields):
            logit += cfg.a_shared * w_shared[f][ids[:, f]]
            logit += cfg.a_spec * w_k[f][ids[:, f]]
        labels = (draw.uniform(n) < expit(logit)).astype(int)
        flips = draw.uniform(n) < cfg.noise_rate
        labels = np.where(flips, 1 - labels, labels)
        samples = [Sample(k, int(labels[i]), tuple(int(x) for x in ids[i]))
                   for i in range(n)]
        n_test = n // 5
        train.append(samples[: n - n_test])
        test.append(samples[n - n_test:])
    return Dataset(schema, train, test)


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

def batch_iter(dataset: Dataset, batch_size: int, rng: RngStream):
    """One shuffled pass over the pooled train samples, in fixed-size chunks.

    The union is scenario-major before shuffling; the last short chunk is
    kept, so every sample appears exactly once per epoch.
    """
    if batch_size < 2:
        raise ConfigError(f"batch size must be >= 2, got {batch_size}")
    pool = dataset.all_train()
    order = rng.permutation(len(pool))
    for start in range(0, len(pool), batch_size):
        yield [pool[i] for i in order[start:start + batch_size]]
