"""MiniRocket: fixed {-1, 2} kernels, data-driven biases, PPV pooling.

Each of the 84 length-9 kernels has weight -1 everywhere except three
positions holding 2. Writing the weights as ``-1 + 3 * [tap in triple]``
turns the convolution into additions only::

    y[t] = -sum_{m=0..8} x[t + (m-4)d] + 3 * (x[t+o0] + x[t+o1] + x[t+o2])

Multivariate input is handled by summing a random channel subset per
kernel/dilation combination before pooling.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from numba import njit

from .._parallel import parallel_map
from ..errors import InvariantError

KERNEL_LENGTH = 9
KERNEL_INDICES = np.array(list(combinations(range(KERNEL_LENGTH), 3)), dtype=np.int64)
N_KERNELS = KERNEL_INDICES.shape[0]  # 84
DEFAULT_N_FEATURES = 9996
DEFAULT_MAX_DILATIONS = 32


def kernel_weights(kernel_index: int) -> np.ndarray:
    w = -np.ones(KERNEL_LENGTH)
    w[KERNEL_INDICES[kernel_index]] = 2.0
    return w


@njit(nogil=True, cache=True)
def _pad(X, P):
    C, L = X.shape
    Xp = np.zeros((C, L + 2 * P), dtype=X.dtype)
    Xp[:, P:P + L] = X
    return Xp


@njit(nogil=True, cache=True)
def _window_sums(Xp, P, d, L, W):
    # W[c, t] = -sum of the nine dilated taps around t
    for c in range(Xp.shape[0]):
        w = W[c]
        w[:] = 0
        for m in range(KERNEL_LENGTH):
            s = P + (m - 4) * d
            xs = Xp[c, s:s + L]
            for t in range(L):
                w[t] -= xs[t]


@njit(nogil=True, cache=True)
def _combination_output(Xp, W, channels, P, d, triple, L, y):
    o0 = P + (triple[0] - 4) * d
    o1 = P + (triple[1] - 4) * d
    o2 = P + (triple[2] - 4) * d
    y[:] = 0
    for q in range(channels.shape[0]):
        c = channels[q]
        w = W[c]
        a = Xp[c, o0:o0 + L]
        b = Xp[c, o1:o1 + L]
        e = Xp[c, o2:o2 + L]
        for t in range(L):
            g = a[t] + b[t] + e[t]
            y[t] += w[t] + g + g + g


@njit(nogil=True, cache=True, fastmath=True)
def _count_above(y, b):
    # float32 counts stay exact below 2**24 and vectorize better than ints
    cnt = np.float32(0.0)
    for t in range(y.shape[0]):
        cnt += np.float32(1.0) if y[t] > b else np.float32(0.0)
    return cnt


@njit(nogil=True, cache=True)
def _additive_conv(X, triple, d, channels):
    # only the selected channels are padded and window-summed
    n_sel = channels.shape[0]
    L = X.shape[1]
    P = 4 * d
    sub = np.empty((n_sel, L), dtype=X.dtype)
    for q in range(n_sel):
        sub[q] = X[channels[q]]
    Xp = _pad(sub, P)
    W = np.empty((n_sel, L), dtype=X.dtype)
    _window_sums(Xp, P, d, L, W)
    y = np.empty(L, dtype=X.dtype)
    _combination_output(Xp, W, np.arange(n_sel), P, d, triple, L, y)
    return y


def additive_convolution(x, kernel_index: int, dilation: int, channels=None) -> np.ndarray:
    """Zero-padded 'same' convolution of kernel ``kernel_index`` via additions.

    ``x`` is 1-D or (C, L); with several channels the selected ones are
    summed. Returns an array of length L in the input's float dtype.
    """
    X = np.asarray(x)
    if not np.issubdtype(X.dtype, np.floating):
        X = X.astype(np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if channels is None:
        channels = np.arange(X.shape[0])
    channels = np.asarray(channels, dtype=np.int64)
    if dilation < 1:
        raise InvariantError("dilation must be >= 1")
    return _additive_conv(np.ascontiguousarray(X), KERNEL_INDICES[kernel_index], int(dilation), channels)


@njit(nogil=True, cache=True)
def _transform_one(X, dilations, feats_per_dilation, chan_offsets, chan_idx, biases, kernel_indices):
    C, L = X.shape
    n_k = kernel_indices.shape[0]
    P = 4 * dilations.max()
    Xp = _pad(X, P)
    W = np.empty((C, L), dtype=X.dtype)
    y = np.empty(L, dtype=X.dtype)
    out = np.zeros(biases.shape[0])
    comb = 0
    f = 0
    for di in range(dilations.shape[0]):
        d = dilations[di]
        pad = 4 * d
        _window_sums(Xp, P, d, L, W)
        for k in range(n_k):
            channels = chan_idx[chan_offsets[comb]:chan_offsets[comb + 1]]
            _combination_output(Xp, W, channels, P, d, kernel_indices[k], L, y)
            # alternate combinations pool over the unpadded interior only
            if comb % 2 == 0 or L - 2 * pad <= 0:
                lo = 0
                hi = L
            else:
                lo = pad
                hi = L - pad
            seg = y[lo:hi]
            for _ in range(feats_per_dilation[di]):
                out[f] = _count_above(seg, biases[f]) / (hi - lo)
                f += 1
            comb += 1
    return out


@dataclass(frozen=True, eq=False)
class MiniRocketParams:
    """Fitted MiniRocket state.

    Attributes
    ----------
    input_len, n_channels : int
        Shape the parameters were fitted for.
    dilations : ndarray of int64
        Distinct dilations, increasing.
    features_per_dilation : ndarray of int64
        Bias quantiles (features) per kernel at each dilation.
    channel_offsets, channel_indices : ndarray of int64
        CSR layout of the channel subset for every combination, ordered
        dilation-major then kernel.
    biases : ndarray of float32
        One per feature.
    seed : int
    """

    input_len: int
    n_channels: int
    dilations: np.ndarray
    features_per_dilation: np.ndarray
    channel_offsets: np.ndarray
    channel_indices: np.ndarray
    biases: np.ndarray
    seed: int

    @property
    def n_combinations(self) -> int:
        return N_KERNELS * self.dilations.shape[0]

    @property
    def n_features(self) -> int:
        return self.biases.shape[0]

    def channels(self, combination: int) -> np.ndarray:
        return self.channel_indices[self.channel_offsets[combination]:self.channel_offsets[combination + 1]]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for a in (self.dilations, self.features_per_dilation, self.channel_offsets,
                  self.channel_indices, self.biases):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {
            "input_len": self.input_len,
            "n_channels": self.n_channels,
            "dilations": self.dilations.tolist(),
            "features_per_dilation": self.features_per_dilation.tolist(),
            "channel_offsets": self.channel_offsets.tolist(),
            "channel_indices": self.channel_indices.tolist(),
            "biases": [float(b) for b in self.biases],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MiniRocketParams":
        return cls(
            int(d["input_len"]), int(d["n_channels"]),
            np.asarray(d["dilations"], dtype=np.int64),
            np.asarray(d["features_per_dilation"], dtype=np.int64),
            np.asarray(d["channel_offsets"], dtype=np.int64),
            np.asarray(d["channel_indices"], dtype=np.int64),
            np.asarray(d["biases"], dtype=np.float32),
            int(d["seed"]),
        )


def fit_dilations(input_len: int, n_features: int = DEFAULT_N_FEATURES,
                  max_dilations_per_kernel: int = DEFAULT_MAX_DILATIONS):
    """Exponentially spaced dilations and the feature budget at each one.

    Returns ``(dilations, features_per_dilation)`` with
    ``84 * features_per_dilation.sum() == 84 * (n_features // 84)``.
    """
    if input_len < KERNEL_LENGTH:
        raise InvariantError(f"input_len must be >= {KERNEL_LENGTH}")
    per_kernel = n_features // N_KERNELS
    if per_kernel < 1:
        raise InvariantError(f"n_features must be >= {N_KERNELS}")
    true_max = min(per_kernel, max_dilations_per_kernel)
    multiplier = per_kernel / true_max
    max_exponent = np.log2((input_len - 1) / (KERNEL_LENGTH - 1))
    dilations, counts = np.unique(
        np.logspace(0, max_exponent, true_max, base=2).astype(np.int64), return_counts=True)
    per_dilation = (counts * multiplier).astype(np.int64)
    remainder = per_kernel - per_dilation.sum()
    i = 0
    while remainder > 0:
        per_dilation[i] += 1
        remainder -= 1
        i = (i + 1) % per_dilation.shape[0]
    return dilations, per_dilation


def _quantiles(n: int) -> np.ndarray:
    # low-discrepancy sequence on (0, 1)
    return (np.arange(1, n + 1) * ((np.sqrt(5) + 1) / 2)) % 1


def _as_float32(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float32)


def minirocket_fit(X, seed: int = 0, input_len: int = None, n_features: int = DEFAULT_N_FEATURES,
                   max_dilations_per_kernel: int = DEFAULT_MAX_DILATIONS) -> MiniRocketParams:
    """Fit dilations, channel subsets and biases.

    Parameters
    ----------
    X : sequence of (C, L) arrays
        Normalized training readings. Anything with ``len`` and integer
        indexing works; only the readings drawn as bias sources are touched.
    seed : int
    input_len : int, optional
        Must match the readings when given.
    """
    n = len(X)
    if n == 0:
        raise InvariantError("minirocket_fit needs at least one training reading")
    first = np.asarray(X[0])
    C, L = first.shape
    if input_len is not None and input_len != L:
        raise InvariantError(f"input_len {input_len} does not match readings of length {L}")
    rng = np.random.default_rng(seed)
    dilations, per_dilation = fit_dilations(L, n_features, max_dilations_per_kernel)
    n_comb = N_KERNELS * dilations.shape[0]

    max_exp = np.log2(min(C, KERNEL_LENGTH) + 1)
    counts = np.floor(2 ** rng.uniform(0, max_exp, n_comb)).astype(np.int64)
    counts = np.clip(counts, 1, C)
    offsets = np.zeros(n_comb + 1, dtype=np.int64)
    offsets[1:] = np.cumsum(counts)
    indices = np.concatenate([np.sort(rng.choice(C, c, replace=False)) for c in counts]).astype(np.int64)

    sources = rng.integers(0, n, size=n_comb)
    quantiles = _quantiles(N_KERNELS * int(per_dilation.sum()))
    biases = np.empty(quantiles.shape[0], dtype=np.float32)
    nb = np.repeat(per_dilation, N_KERNELS)
    first = np.concatenate([[0], np.cumsum(nb)[:-1]])
    # visit combinations grouped by source reading so each is loaded once
    current = None
    for comb in np.argsort(sources, kind="stable"):
        src = int(sources[comb])
        if src != current:
            current = src
            x = _as_float32(X[src])
        d = int(dilations[comb // N_KERNELS])
        k = comb % N_KERNELS
        f, n_b = int(first[comb]), int(nb[comb])
        y = _additive_conv(x, KERNEL_INDICES[k], d, indices[offsets[comb]:offsets[comb + 1]])
        biases[f:f + n_b] = np.quantile(y.astype(np.float64), quantiles[f:f + n_b])
    return MiniRocketParams(L, C, dilations, per_dilation, offsets, indices, biases, int(seed))


def minirocket_transform(X, params: MiniRocketParams, jobs: int = 1) -> np.ndarray:
    """PPV features for one reading (C, L) or a batch (n, C, L).

    Batches may also be any sequence of (C, L) arrays; returns float64
    of shape (n_features,) or (n, n_features).
    """
    single = isinstance(X, np.ndarray) and X.ndim == 2
    items = [X] if single else X

    def one(x):
        x = _as_float32(x)
        if x.shape[-1] >= 2 ** 24:
            raise InvariantError("readings longer than 2**24 steps are not supported")
        if x.shape != (params.n_channels, params.input_len):
            raise InvariantError(
                f"reading shape {x.shape} does not match fitted ({params.n_channels}, {params.input_len})")
        return _transform_one(x, params.dilations, params.features_per_dilation, params.channel_offsets,
                              params.channel_indices, params.biases, KERNEL_INDICES)

    rows = parallel_map(lambda i: one(items[i]), range(len(items)), jobs)
    out = np.vstack(rows) if rows else np.zeros((0, params.n_features))
    return out[0] if single else out
