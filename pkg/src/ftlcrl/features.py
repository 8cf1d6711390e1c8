"""Sparse random-projection features with soft grid binning.

An input ``x`` is projected with a fixed Gaussian matrix, squashed by a
sigmoid into ``(0, 1)`` and every group of ``g`` squashed coordinates is
binned on a ``bins**g`` grid with multilinear weights.  Each of the
``num_tiles`` groups ("tiles") owns a contiguous block of ``bins**g``
coordinates and activates exactly ``2**g`` of them, so every encoding has
``K = num_tiles * 2**g`` stored entries in a space of size
``D = num_tiles * bins**g``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError

__all__ = [
    "EncoderConfig",
    "Encoder",
    "SparseFeature",
    "new_encoder",
    "soft_bin_1d",
    "encode",
]


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int
    num_tiles: int = 300
    grid_dim: int = 2
    bins: int = 9
    seed: int = 0

    def validate(self) -> None:
        if self.input_dim < 1:
            raise ConfigError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.num_tiles < 1:
            raise ConfigError(f"num_tiles must be >= 1, got {self.num_tiles}")
        if self.grid_dim not in (1, 2):
            raise ConfigError(f"grid_dim must be 1 or 2, got {self.grid_dim}")
        if self.bins < 2:
            raise ConfigError(f"bins must be >= 2, got {self.bins}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must fit in 64 bits, got {self.seed}")

    @property
    def tile_size(self) -> int:
        return self.bins**self.grid_dim

    @property
    def dim(self) -> int:
        """Feature space size D."""
        return self.num_tiles * self.tile_size

    @property
    def nnz(self) -> int:
        """Active entries per encoding K."""
        return self.num_tiles * 2**self.grid_dim


@dataclass(frozen=True)
class SparseFeature:
    dim: int
    indices: np.ndarray
    values: np.ndarray

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class Encoder:
    config: EncoderConfig
    projection: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.config.dim

    @property
    def nnz(self) -> int:
        return self.config.nnz

    def encode_batch(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Encode rows of ``x``; returns ``(indices, values)``, each ``(N, K)``.

        The projection accumulates input columns one at a time rather than
        calling a BLAS matmul, so a row's result never depends on the batch
        it is part of.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise InputError(
                f"expected input of shape (N, {self.config.input_dim}), got {x.shape}"
            )
        if not np.all(np.isfinite(x)):
            raise InputError("non-finite encoder input")
        cfg = self.config
        z = _project(x, self.projection)
        u = _sigmoid(z)
        lo, w_hi = _soft_bin(u, cfg.bins)
        n = x.shape[0]
        lo = lo.reshape(n, cfg.num_tiles, cfg.grid_dim)
        w_hi = w_hi.reshape(n, cfg.num_tiles, cfg.grid_dim)
        offsets = np.arange(cfg.num_tiles, dtype=np.int64) * cfg.tile_size
        if cfg.grid_dim == 1:
            idx = (offsets + lo[..., 0])[..., None] + _CORNERS_1
            w = w_hi[..., 0]
            val = np.empty(idx.shape)
            np.subtract(1.0, w, out=val[..., 0])
            val[..., 1] = w
        else:
            # row-major corner order (0,0), (0,1), (1,0), (1,1) keeps indices sorted
            b = cfg.bins
            base = offsets + lo[..., 0] * b + lo[..., 1]
            idx = base[..., None] + np.array([0, 1, b, b + 1], dtype=np.int64)
            w0, w1 = w_hi[..., 0], w_hi[..., 1]
            v0 = 1.0 - w0
            v1 = 1.0 - w1
            val = np.empty(idx.shape)
            np.multiply(v0, v1, out=val[..., 0])
            np.multiply(v0, w1, out=val[..., 1])
            np.multiply(w0, v1, out=val[..., 2])
            np.multiply(w0, w1, out=val[..., 3])
        return idx.reshape(n, cfg.nnz), val.reshape(n, cfg.nnz)

    def encode(self, x: np.ndarray) -> SparseFeature:
        return encode(self, x)


_CORNERS_1 = np.array([0, 1], dtype=np.int64)


def _project(x: np.ndarray, proj: np.ndarray) -> np.ndarray:
    # sequential accumulation over the (small) input dimension; the result
    # for a row is independent of which other rows share the batch
    z = x[:, 0:1] * proj[:, 0]
    for j in range(1, proj.shape[1]):
        z += x[:, j : j + 1] * proj[:, j]
    return z


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _soft_bin(u: np.ndarray, bins: int) -> tuple[np.ndarray, np.ndarray]:
    pos = (bins - 1) * u
    lo = np.minimum(np.floor(pos), bins - 2)
    lo = np.maximum(lo, 0.0)
    frac = pos - lo
    return lo.astype(np.int64), frac


def new_encoder(config: EncoderConfig) -> Encoder:
    """Build an encoder whose projection is a pure function of ``config.seed``."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    rows = config.num_tiles * config.grid_dim
    scale = np.sqrt(1.0 / config.input_dim)
    projection = rng.normal(0.0, scale, size=(rows, config.input_dim))
    projection.setflags(write=False)
    return Encoder(config=config, projection=projection)


def soft_bin_1d(u: float, bins: int) -> tuple[tuple[int, int], tuple[float, float]]:
    """Locate ``u`` in ``(0, 1)`` between two neighbouring edges of a ``bins`` grid."""
    lo, frac = _soft_bin(np.asarray([u], dtype=np.float64), bins)
    i = int(lo[0])
    f = float(frac[0])
    return (i, i + 1), (1.0 - f, f)


def encode(enc: Encoder, x: np.ndarray) -> SparseFeature:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InputError(f"expected a vector, got shape {x.shape}")
    idx, val = enc.encode_batch(x[None, :])
    return SparseFeature(dim=enc.dim, indices=idx[0], values=val[0])
