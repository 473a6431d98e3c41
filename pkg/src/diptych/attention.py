"""Joint text-image attention and reference-attention enhancement.

A joint sequence stacks text tokens, then left-panel tokens, then
right-panel tokens.  The post-softmax weight block where right-panel
queries attend to left-panel keys is the "reference block"; rescaling it
by a factor > 1 strengthens detail transfer from the reference panel into
the panel being synthesized.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, PreconditionError, ShapeError
from .numerics import Matrix, softmax_rows

_ROW_SUM_TOL = 1e-6


@dataclass(frozen=True)
class AttentionPartition:
    """Token counts locating the text/left/right blocks in a joint sequence."""

    text_len: int
    left_len: int
    right_len: int

    def __post_init__(self):
        for name in ("text_len", "left_len", "right_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")

    @property
    def total(self) -> int:
        return self.text_len + self.left_len + self.right_len


@dataclass(frozen=True)
class EnhancementConfig:
    """Reference-block rescale factor and optional row renormalization.

    factor = 1 must always be a no-op, so that path returns inputs untouched
    regardless of ``renormalize``.  ``layers`` restricts enhancement to the
    listed denoiser blocks; None applies it in every block.
    """

    factor: float = 1.0
    renormalize: bool = False
    layers: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.factor < 1.0:
            raise ConfigError(f"rescale factor must be >= 1, got {self.factor}")


@dataclass(frozen=True)
class AttentionProjections:
    """Query/key/value projection matrices, model_dim x (heads * head_dim)."""

    query: Matrix
    key: Matrix
    value: Matrix
    heads: int = 1


@dataclass(frozen=True)
class JointSequence:
    tokens: Matrix
    partition: AttentionPartition
    head_dim: int

    def __post_init__(self):
        if self.tokens.ndim != 2:
            raise ShapeError(f"tokens must be 2-D, got {self.tokens.ndim}-D")
        if self.tokens.shape[0] != self.partition.total:
            raise ShapeError(
                f"sequence length {self.tokens.shape[0]} does not match "
                f"partition total {self.partition.total}"
            )


class AttentionResult(NamedTuple):
    output: Matrix
    weights: Matrix


def joint_attention(q: Matrix, k: Matrix, v: Matrix, head_dim: int) -> AttentionResult:
    """softmax(q k^T / sqrt(head_dim)) v, exposing the weight matrix."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ShapeError("joint_attention expects 2-D q, k, v")
    if q.shape[1] != head_dim or k.shape[1] != head_dim:
        raise ShapeError(
            f"q/k width must equal head_dim={head_dim}, got {q.shape[1]} and {k.shape[1]}"
        )
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"key count {k.shape[0]} != value count {v.shape[0]}")
    weights = softmax_rows(q @ k.T, 1.0 / np.sqrt(float(head_dim)))
    return AttentionResult(weights @ v, weights)


def slice_reference_block(w: Matrix, partition: AttentionPartition) -> tuple[slice, slice]:
    """Row/column slices of the right-query-to-left-key block of ``w``."""
    side = partition.total
    if w.ndim < 2 or w.shape[-1] != side or w.shape[-2] != side:
        raise ShapeError(
            f"weight matrix side {w.shape[-2:]} does not match partition total {side}"
        )
    row_start = partition.text_len + partition.left_len
    return (
        slice(row_start, side),
        slice(partition.text_len, partition.text_len + partition.left_len),
    )


def _rescale_reference_block(
    w: np.ndarray, partition: AttentionPartition, cfg: EnhancementConfig
) -> np.ndarray:
    """Unvalidated enhancement over (..., S, S) weight stacks.

    Returns ``w`` itself when factor == 1 so the no-op case is bitwise exact.
    """
    if cfg.factor == 1.0:
        return w
    rows, cols = slice_reference_block(w, partition)
    out = w.copy()
    out[..., rows, cols] *= cfg.factor
    if cfg.renormalize:
        sums = out[..., rows, :].sum(axis=-1, keepdims=True)
        out[..., rows, :] /= sums
    return out


def enhance_reference_attention(
    w: Matrix, partition: AttentionPartition, cfg: EnhancementConfig
) -> Matrix:
    """Multiply the reference block of a row-stochastic weight matrix by cfg.factor.

    Entries outside the right-query/left-key block are never touched.  With
    ``renormalize`` the affected rows are rescaled to sum to one again.
    """
    w = np.asarray(w, dtype=np.float64)
    slice_reference_block(w, partition)  # shape validation
    row_sums = w.sum(axis=-1)
    if np.any(np.abs(row_sums - 1.0) > _ROW_SUM_TOL) or np.any(w < 0):
        raise PreconditionError("weights must be row-stochastic (post-softmax)")
    return _rescale_reference_block(w, partition, cfg)


def attend_enhanced(
    seq: JointSequence, projections: AttentionProjections, cfg: EnhancementConfig
) -> Matrix:
    """Full attention with the weight matrix intercepted for enhancement.

    With cfg.factor == 1 the result equals plain :func:`joint_attention`
    over the projected q/k/v, exactly.
    """
    tokens = np.asarray(seq.tokens, dtype=np.float64)
    heads = projections.heads
    q = tokens @ projections.query
    k = tokens @ projections.key
    v = tokens @ projections.value
    if q.shape != k.shape or k.shape != v.shape:
        raise ShapeError("projected q/k/v shapes differ")
    if q.shape[1] != heads * seq.head_dim:
        raise ShapeError(
            f"projection width {q.shape[1]} != heads*head_dim = {heads * seq.head_dim}"
        )
    out = np.empty_like(q)
    d = seq.head_dim
    for h in range(heads):
        cols = slice(h * d, (h + 1) * d)
        weights = softmax_rows(q[:, cols] @ k[:, cols].T, 1.0 / np.sqrt(float(d)))
        weights = _rescale_reference_block(weights, seq.partition, cfg)
        out[:, cols] = weights @ v[:, cols]
    return out
