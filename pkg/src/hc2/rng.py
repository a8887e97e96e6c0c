"""Deterministic random streams with labeled substreams.

Every stochastic phase of the pipeline (init, batching, sampling, dropout,
diffusion, clustering) pulls from its own substream so that disabling one
phase never perturbs the draw sequence of another.  A substream is fully
determined by (seed, label): creation order does not matter.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import ConfigError


def _label_key(label: str) -> int:
    digest = hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


class RngStream:
    """A named pseudo-random stream backed by numpy's PCG64.

    Identical (seed, label, draw index) always yields identical output;
    draws from one substream never affect another's sequence.
    """

    def __init__(self, seed: int, label: str = "root"):
        if not isinstance(seed, int) or seed < 0 or seed >= 2**64:
            raise ConfigError(f"seed must be a non-negative 64-bit integer, got {seed!r}")
        self.seed = seed
        self.label = label
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([seed, _label_key(label)]))
        )

    def substream(self, label: str) -> "RngStream":
        """Return a fresh stream positioned at the start of `label`.

        Every call constructs a new generator, so two calls with one label
        replay the same draw sequence; hand each substream to exactly one
        consumer.  Streams are keyed by the root seed plus the full label
        path only, so `RngStream(s).substream(x)` is identical in every
        process.
        """
        return RngStream(self.seed, f"{self.label}/{label}")

    # -- draw helpers -----------------------------------------------------

    def normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size)

    def uniform(self, size=None) -> np.ndarray:
        return self._gen.random(size)

    def integers(self, low: int, high: int | None = None, size=None):
        return self._gen.integers(low, high, size=size)

    def choice(self, n: int, k: int, replace: bool = False) -> np.ndarray:
        """Choose k indices from range(n)."""
        return self._gen.choice(n, size=k, replace=replace)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)
