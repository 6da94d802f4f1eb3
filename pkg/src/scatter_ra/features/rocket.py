"""Rocket: random dilated kernels pooled into [max, PPV] feature pairs."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from numba import njit

from .._parallel import parallel_map
from ..errors import InvariantError

CANDIDATE_LENGTHS = np.array((7, 9, 11), dtype=np.int64)
DEFAULT_N_KERNELS = 10_000


@dataclass(frozen=True, eq=False)
class KernelBank:
    """Flat storage for ``count`` kernels.

    ``weights`` concatenates every kernel's taps (``lengths`` gives the
    split); ``channel_indices`` is a CSR array indexed by ``channel_offsets``.
    """

    lengths: np.ndarray
    weights: np.ndarray
    biases: np.ndarray
    dilations: np.ndarray
    paddings: np.ndarray
    channel_offsets: np.ndarray
    channel_indices: np.ndarray
    input_len: int
    n_channels: int
    seed: int

    @property
    def count(self) -> int:
        return self.lengths.shape[0]

    @property
    def weight_offsets(self) -> np.ndarray:
        off = np.zeros(self.count + 1, dtype=np.int64)
        off[1:] = np.cumsum(self.lengths)
        return off

    def kernel_weights(self, i: int) -> np.ndarray:
        off = self.weight_offsets
        return self.weights[off[i]:off[i + 1]]

    def channels(self, i: int) -> np.ndarray:
        return self.channel_indices[self.channel_offsets[i]:self.channel_offsets[i + 1]]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for a in (self.lengths, self.weights, self.biases, self.dilations, self.paddings,
                  self.channel_offsets, self.channel_indices):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()


def generate_rocket_kernels(seed: int, count: int = DEFAULT_N_KERNELS, input_len: int = None,
                            n_channels: int = 20) -> KernelBank:
    if input_len is None or input_len <= CANDIDATE_LENGTHS.max():
        raise InvariantError(f"input_len must exceed the longest kernel ({CANDIDATE_LENGTHS.max()})")
    if count < 1 or n_channels < 1:
        raise InvariantError("count and n_channels must be positive")
    rng = np.random.default_rng(seed)
    lengths = rng.choice(CANDIDATE_LENGTHS, count)
    weights = np.empty(int(lengths.sum()))
    biases = np.empty(count)
    dilations = np.empty(count, dtype=np.int64)
    paddings = np.empty(count, dtype=np.int64)
    ch_counts = np.empty(count, dtype=np.int64)
    ch_parts = []
    a = 0
    for i in range(count):
        k = int(lengths[i])
        w = rng.normal(0.0, 1.0, k)
        weights[a:a + k] = w - w.mean()
        a += k
        biases[i] = rng.uniform(-1.0, 1.0)
        d = int(2 ** rng.uniform(0, np.log2((input_len - 1) / (k - 1))))
        dilations[i] = max(d, 1)
        paddings[i] = ((k - 1) * dilations[i]) // 2 if rng.integers(2) == 1 else 0
        c = int(2 ** rng.uniform(0, np.log2(n_channels + 1)))
        c = min(max(c, 1), n_channels)
        ch_counts[i] = c
        ch_parts.append(np.sort(rng.choice(n_channels, c, replace=False)))
    offsets = np.zeros(count + 1, dtype=np.int64)
    offsets[1:] = np.cumsum(ch_counts)
    return KernelBank(lengths, weights, biases, dilations, paddings, offsets,
                      np.concatenate(ch_parts).astype(np.int64), int(input_len), int(n_channels), int(seed))


def pool_max_ppv(values) -> tuple:
    """``(max, fraction of values strictly above zero)``."""
    v = np.asarray(values, dtype=np.float64)
    return float(v.max()), float(np.count_nonzero(v > 0) / v.size)


@njit(nogil=True, cache=True)
def _apply_kernel(z, w, bias, d, pad):
    L = z.shape[0]
    k = w.shape[0]
    end = L + pad - (k - 1) * d
    mx = -np.inf
    ppv = 0
    for i in range(-pad, end):
        s = 0.0
        idx = i
        for j in range(k):
            if 0 <= idx < L:
                s += w[j] * z[idx]
            idx += d
        s -= bias
        if s > mx:
            mx = s
        if s > 0:
            ppv += 1
    return mx, ppv / (end + pad)


@njit(nogil=True, cache=True)
def _transform_one(X, lengths, weights, biases, dilations, paddings, ch_off, ch_idx):
    n = lengths.shape[0]
    L = X.shape[1]
    out = np.empty(2 * n)
    z = np.empty(L)
    a = 0
    for i in range(n):
        z[:] = 0.0
        for q in range(ch_off[i], ch_off[i + 1]):
            z += X[ch_idx[q]]
        k = lengths[i]
        mx, ppv = _apply_kernel(z, weights[a:a + k], biases[i], dilations[i], paddings[i])
        out[2 * i] = mx
        out[2 * i + 1] = ppv
        a += k
    return out


def rocket_transform(X, bank: KernelBank, jobs: int = 1) -> np.ndarray:
    """Features for one normalized reading (C, L) or a batch of them.

    Kernel ``i`` fills columns ``2i`` (max) and ``2i + 1`` (PPV).
    """
    single = isinstance(X, np.ndarray) and X.ndim == 2
    items = [X] if single else X

    def one(i):
        x = np.ascontiguousarray(items[i], dtype=np.float64)
        if x.shape[0] != bank.n_channels:
            raise InvariantError(f"reading has {x.shape[0]} channels, bank expects {bank.n_channels}")
        if x.shape[1] != bank.input_len:
            raise InvariantError(f"reading length {x.shape[1]} does not match bank input_len {bank.input_len}")
        return _transform_one(x, bank.lengths, bank.weights, bank.biases, bank.dilations,
                              bank.paddings, bank.channel_offsets, bank.channel_indices)

    rows = parallel_map(one, range(len(items)), jobs)
    out = np.vstack(rows) if rows else np.zeros((0, 2 * bank.count))
    return out[0] if single else out
