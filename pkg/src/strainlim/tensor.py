"""Symmetric tensor algebra for d in {2, 3}.

Tensors are stored by their upper triangle in Voigt order: ``(xx, yy, xy)``
for d=2 and ``(xx, yy, zz, yz, xz, xy)`` for d=3. Every function accepts
either a :class:`SymTensor` or a numpy array whose last axis holds the
components, so the same code serves single values and per-cell batches.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

NCOMP = {2: 3, 3: 6}
_DIM = {3: 2, 6: 3}

# (row, col) of each stored component
_INDEX = {
    2: ((0, 0), (1, 1), (0, 1)),
    3: ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)),
}


def dim_of(ncomp: int) -> int:
    try:
        return _DIM[ncomp]
    except KeyError:
        raise ValueError(f"{ncomp} components do not describe a symmetric 2x2 or 3x3 tensor")


def contraction_weights(dim: int) -> np.ndarray:
    """Weights making ``sum(w * s * r)`` the full double contraction."""
    return np.array([1.0] * dim + [2.0] * (NCOMP[dim] - dim))


def identity_components(dim: int) -> np.ndarray:
    return np.array([1.0] * dim + [0.0] * (NCOMP[dim] - dim))


@dataclass(frozen=True)
class SymTensor:
    """A single symmetric tensor value."""

    dim: int
    entries: tuple[float, ...]

    def __post_init__(self):
        if self.dim not in NCOMP:
            raise ValueError("dim must be 2 or 3")
        if len(self.entries) != NCOMP[self.dim]:
            raise ValueError(f"expected {NCOMP[self.dim]} entries, got {len(self.entries)}")

    @classmethod
    def from_array(cls, a) -> SymTensor:
        a = np.asarray(a, dtype=float).reshape(-1)
        return cls(dim_of(a.size), tuple(float(x) for x in a))

    @classmethod
    def from_matrix(cls, m) -> SymTensor:
        m = np.asarray(m, dtype=float)
        d = m.shape[0]
        if m.shape != (d, d) or d not in NCOMP:
            raise ValueError("expected a 2x2 or 3x3 matrix")
        if not np.allclose(m, m.T, rtol=0.0, atol=1e-14 * (1.0 + np.abs(m).max())):
            raise ValueError("matrix is not symmetric")
        return cls(d, tuple(float(m[i, j]) for i, j in _INDEX[d]))

    @classmethod
    def identity(cls, dim: int = 2) -> SymTensor:
        return cls(dim, tuple(identity_components(dim)))

    @classmethod
    def zero(cls, dim: int = 2) -> SymTensor:
        return cls(dim, (0.0,) * NCOMP[dim])

    @classmethod
    def diag(cls, *values: float) -> SymTensor:
        d = len(values)
        return cls(d, tuple(float(v) for v in values) + (0.0,) * (NCOMP[d] - d))

    def array(self) -> np.ndarray:
        return np.array(self.entries)

    def matrix(self) -> np.ndarray:
        return to_matrix(self.array())

    def __add__(self, other: SymTensor) -> SymTensor:
        _check_same_dim(self, other)
        return SymTensor(self.dim, tuple(a + b for a, b in zip(self.entries, other.entries)))

    def __sub__(self, other: SymTensor) -> SymTensor:
        _check_same_dim(self, other)
        return SymTensor(self.dim, tuple(a - b for a, b in zip(self.entries, other.entries)))

    def __mul__(self, c: float) -> SymTensor:
        return SymTensor(self.dim, tuple(c * a for a in self.entries))

    __rmul__ = __mul__

    def __neg__(self) -> SymTensor:
        return self * -1.0


TensorLike = Union[SymTensor, np.ndarray]


def _check_same_dim(a: SymTensor, b: SymTensor) -> None:
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")


def _unwrap(S) -> tuple[np.ndarray, bool]:
    if isinstance(S, SymTensor):
        return S.array(), True
    return np.asarray(S, dtype=float), False


def _wrap(a: np.ndarray, single: bool):
    return SymTensor.from_array(a) if single else a


def to_matrix(a: np.ndarray) -> np.ndarray:
    """Expand component arrays ``(..., ncomp)`` to full matrices ``(..., d, d)``."""
    a = np.asarray(a, dtype=float)
    d = dim_of(a.shape[-1])
    m = np.empty(a.shape[:-1] + (d, d))
    for k, (i, j) in enumerate(_INDEX[d]):
        m[..., i, j] = a[..., k]
        m[..., j, i] = a[..., k]
    return m


def from_matrix(m: np.ndarray) -> np.ndarray:
    """Upper-triangle components of matrices ``(..., d, d)``; symmetry is assumed."""
    m = np.asarray(m, dtype=float)
    d = m.shape[-1]
    return np.stack([m[..., i, j] for i, j in _INDEX[d]], axis=-1)


def trace(S: TensorLike):
    a, single = _unwrap(S)
    d = dim_of(a.shape[-1])
    tr = a[..., :d].sum(axis=-1)
    return float(tr) if single else tr


def deviatoric(S: TensorLike):
    a, single = _unwrap(S)
    d = dim_of(a.shape[-1])
    out = a.copy()
    out[..., :d] -= (a[..., :d].sum(axis=-1) / d)[..., None]
    return _wrap(out, single)


def volumetric(S: TensorLike):
    """``(tr S / d) I``, the complement of :func:`deviatoric`."""
    a, single = _unwrap(S)
    d = dim_of(a.shape[-1])
    out = np.zeros_like(a)
    out[..., :d] = (a[..., :d].sum(axis=-1) / d)[..., None]
    return _wrap(out, single)


def contract(S: TensorLike, R: TensorLike):
    a, single_a = _unwrap(S)
    b, single_b = _unwrap(R)
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]} components")
    w = contraction_weights(dim_of(a.shape[-1]))
    val = (a * b * w).sum(axis=-1)
    return float(val) if (single_a and single_b) else val


def frobenius_norm(S: TensorLike):
    a, single = _unwrap(S)
    val = np.sqrt(np.maximum(contract(a, a), 0.0))
    return float(val) if single else val


def signed_power(x, a: float):
    """``x |x|^(a-1)``, extended by 0 at x = 0."""
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(ax > 0.0, np.sign(x) * ax**a, 0.0)
    return out if out.ndim else float(out)
