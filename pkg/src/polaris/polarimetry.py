"""Polarimetric scattering vectors, compressed covariance accumulators and the
Wishart dissimilarity used by the detector.

Channel ordering follows the row-major vectorization of the 2x2 scattering
matrix, e.g. (LL, LR, RL, RR) in the circular basis and (HH, HV, VH, VV) in the
linear basis. Covariances are stored as their upper triangle (i <= j, row-major),
q(q+1)/2 complex entries.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache

import numpy as np

REG_EPS = 1e-6


class PolError(ValueError):
    """Rejected polarimetric input (basis mismatch, unknown channel, ...)."""


class DegenerateReferenceError(PolError):
    pass


class BasisKind(str, Enum):
    CIRCULAR = "CircularLR"
    LINEAR = "LinearHV"


_POL_LETTERS = {BasisKind.CIRCULAR: ("L", "R"), BasisKind.LINEAR: ("H", "V")}


@dataclass(frozen=True)
class PolarizationBasis:
    kind: BasisKind
    channel_labels: tuple[str, ...]

    def __post_init__(self):
        labels = tuple(self.channel_labels)
        object.__setattr__(self, "channel_labels", labels)
        if not 1 <= len(labels) <= 4:
            raise PolError(f"channel count must be 1..4, got {len(labels)}")
        if len(set(labels)) != len(labels):
            raise PolError("channel labels must be unique")
        a, b = _POL_LETTERS[self.kind]
        valid = {a + a, a + b, b + a, b + b}
        for lab in labels:
            if lab not in valid:
                raise PolError(f"channel {lab!r} not part of {self.kind.value}")

    @property
    def q(self) -> int:
        return len(self.channel_labels)

    def index(self, label: str) -> int:
        try:
            return self.channel_labels.index(label)
        except ValueError:
            raise PolError(f"unknown channel {label!r}") from None

    @property
    def is_full(self) -> bool:
        """True for fully polarimetric bases (all four, or three under reciprocity)."""
        a, b = _POL_LETTERS[self.kind]
        co = {a + a, b + b} <= set(self.channel_labels)
        cross = {a + b, b + a} & set(self.channel_labels)
        return co and bool(cross) and self.q >= 3


CIRCULAR = PolarizationBasis(BasisKind.CIRCULAR, ("LL", "LR", "RL", "RR"))
LINEAR = PolarizationBasis(BasisKind.LINEAR, ("HH", "HV", "VH", "VV"))
CIRCULAR3 = PolarizationBasis(BasisKind.CIRCULAR, ("LL", "LR", "RR"))
LINEAR3 = PolarizationBasis(BasisKind.LINEAR, ("HH", "HV", "VV"))

_FULL = {BasisKind.CIRCULAR: CIRCULAR, BasisKind.LINEAR: LINEAR}


def n_upper(q: int) -> int:
    return q * (q + 1) // 2


@lru_cache(maxsize=None)
def upper_indices(q: int) -> tuple[np.ndarray, np.ndarray]:
    """Row/column indices of the stored upper triangle, row-major with i <= j."""
    rows, cols = np.triu_indices(q)
    rows.setflags(write=False)
    cols.setflags(write=False)
    return rows, cols


def diagonal_positions(q: int) -> np.ndarray:
    """Positions of the diagonal entries in the stored upper triangle."""
    r, c = upper_indices(q)
    return np.flatnonzero(r == c)


def outer_upper(omega) -> np.ndarray:
    """Upper triangle of omega omega^H for one vector (q,) or a batch (..., q)."""
    omega = np.asarray(omega, dtype=complex)
    r, c = upper_indices(omega.shape[-1])
    return omega[..., r] * np.conj(omega[..., c])


def q_from_upper(m: int) -> int:
    q = int(round((np.sqrt(8 * m + 1) - 1) / 2))
    if n_upper(q) != m:
        raise PolError(f"{m} is not a triangular entry count")
    return q


def expand_upper(upper) -> np.ndarray:
    """Rebuild the full Hermitian matrix (..., q, q) from stored upper entries."""
    upper = np.asarray(upper, dtype=complex)
    q = q_from_upper(upper.shape[-1])
    r, c = upper_indices(q)
    full = np.zeros(upper.shape[:-1] + (q, q), dtype=complex)
    full[..., r, c] = upper
    full[..., c, r] = np.conj(upper)
    # keep diagonal exactly real
    d = np.arange(q)
    full[..., d, d] = full[..., d, d].real
    return full


def compress_full(full) -> np.ndarray:
    full = np.asarray(full, dtype=complex)
    r, c = upper_indices(full.shape[-1])
    return full[..., r, c].copy()


@dataclass
class ScatteringVector:
    basis: PolarizationBasis
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=complex).reshape(-1)
        if vals.shape[0] != self.basis.q:
            raise PolError(f"expected {self.basis.q} channels, got {vals.shape[0]}")
        if not np.all(np.isfinite(vals)):
            raise PolError("scattering vector has non-finite components")
        if self.basis.q == 1:
            # single channel keeps amplitude only
            vals = np.abs(vals).astype(complex)
        self.values = vals


@dataclass
class PolCovariance:
    """Running mean of outer products, compressed to the upper triangle."""

    basis: PolarizationBasis
    upper: np.ndarray = None
    n_samples: int = 0

    def __post_init__(self):
        m = n_upper(self.basis.q)
        if self.upper is None:
            self.upper = np.zeros(m, dtype=complex)
        else:
            self.upper = np.asarray(self.upper, dtype=complex).reshape(-1).copy()
            if self.upper.shape[0] != m:
                raise PolError(f"expected {m} stored entries, got {self.upper.shape[0]}")

    @classmethod
    def from_matrix(cls, basis: PolarizationBasis, mat, n_samples: int = 1) -> "PolCovariance":
        mat = np.asarray(mat, dtype=complex)
        if mat.shape != (basis.q, basis.q):
            raise PolError("matrix shape does not match basis")
        return cls(basis, compress_full(mat), n_samples)

    @property
    def q(self) -> int:
        return self.basis.q

    def matrix(self) -> np.ndarray:
        return expand_upper(self.upper)

    def accumulate(self, omega: ScatteringVector) -> "PolCovariance":
        if omega.basis != self.basis:
            raise PolError("basis mismatch between covariance and scattering vector")
        n = self.n_samples + 1
        self.upper = self.upper + (outer_upper(omega.values) - self.upper) / n
        self.n_samples = n
        return self


def accumulate(cov: PolCovariance, omega: ScatteringVector) -> PolCovariance:
    """Fold one observation into the running mean (mutates and returns ``cov``)."""
    return cov.accumulate(omega)


def power(c: PolCovariance) -> float:
    """Trace of the covariance, the scalar reflection power."""
    q = c.q
    r, cc = upper_indices(q)
    return float(np.sum(c.upper[r == cc].real))


def regularize(sigma: np.ndarray, eps: float = REG_EPS) -> np.ndarray:
    """Add eps*tr/q to the diagonal of one or many (..., q, q) matrices."""
    sigma = np.asarray(sigma, dtype=complex)
    q = sigma.shape[-1]
    tr = np.trace(sigma, axis1=-2, axis2=-1).real
    out = sigma.copy()
    d = np.arange(q)
    out[..., d, d] += (eps * tr / q)[..., None]
    return out


def wishart_distance_matrices(c, sigma, eps: float = REG_EPS) -> np.ndarray:
    """Vectorized q^-1 (ln|S| + tr(S^-1 C)) over leading batch dimensions.

    Non-positive-definite references yield ``nan``.
    """
    c = np.asarray(c, dtype=complex)
    s = regularize(sigma, eps)
    q = s.shape[-1]
    try:
        chol = np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        chol = None
    if chol is None:
        # fall back per matrix so one bad reference doesn't poison the batch
        flat_s = s.reshape(-1, q, q)
        flat_c = np.broadcast_to(c, s.shape).reshape(-1, q, q)
        out = np.full(flat_s.shape[0], np.nan)
        for k in range(flat_s.shape[0]):
            try:
                L = np.linalg.cholesky(flat_s[k])
            except np.linalg.LinAlgError:
                continue
            out[k] = _wishart_from_chol(flat_c[k], L, q)
        return out.reshape(s.shape[:-2])
    return _wishart_from_chol(c, chol, q)


def _wishart_from_chol(c, chol, q):
    logdet = 2.0 * np.sum(np.log(np.abs(np.diagonal(chol, axis1=-2, axis2=-1))), axis=-1)
    c = np.broadcast_to(c, chol.shape)
    # tr(S^-1 C) = ||L^-1 C L^-H||_tr via two triangular solves
    y = np.linalg.solve(chol, c)
    z = np.linalg.solve(chol, np.conj(np.swapaxes(y, -1, -2)))
    tr = np.trace(z, axis1=-2, axis2=-1).real
    return (logdet + tr) / q


def wishart_distance(c: PolCovariance, sigma: PolCovariance, eps: float = REG_EPS) -> float:
    if c.basis != sigma.basis:
        raise PolError("basis mismatch between C and reference")
    d = float(wishart_distance_matrices(c.matrix(), sigma.matrix(), eps))
    if not np.isfinite(d):
        raise DegenerateReferenceError("reference covariance singular after regularization")
    return d


@lru_cache(maxsize=None)
def _circ_from_lin() -> np.ndarray:
    # columns: unit Jones vectors of L and R expressed in (H, V)
    u = np.array([[1.0, 1.0], [-1j, 1j]]) / np.sqrt(2.0)
    a = np.kron(u.T, u.T)
    a.setflags(write=False)
    return a


def channel_change_matrix(source: BasisKind, target: BasisKind) -> np.ndarray:
    """Unitary 4x4 map between full scattering vectors of two bases."""
    a = _circ_from_lin()
    if source == target:
        return np.eye(4, dtype=complex)
    if source == BasisKind.LINEAR:
        return a.copy()
    return np.conj(a.T)


def _embedding(basis: PolarizationBasis) -> np.ndarray:
    """Matrix E with full 4-vector = E @ stored vector (reciprocal cross copied)."""
    full = _FULL[basis.kind].channel_labels
    a, b = _POL_LETTERS[basis.kind]
    e = np.zeros((4, basis.q))
    for j, lab in enumerate(basis.channel_labels):
        e[full.index(lab), j] = 1.0
    if basis.q == 3:
        present = a + b if a + b in basis.channel_labels else b + a
        other = b + a if present == a + b else a + b
        e[full.index(other), basis.index(present)] = 1.0
    return e


def _target_basis(source: PolarizationBasis, target: PolarizationBasis | BasisKind) -> PolarizationBasis:
    if isinstance(target, BasisKind):
        if source.q == 4:
            return _FULL[target]
        return CIRCULAR3 if target == BasisKind.CIRCULAR else LINEAR3
    return target


def _stored_map(source: PolarizationBasis, target: PolarizationBasis) -> np.ndarray:
    """Linear map from source stored channels to target stored channels."""
    a = channel_change_matrix(source.kind, target.kind)
    e = _embedding(source)
    full_t = _FULL[target.kind].channel_labels
    pick = np.zeros((target.q, 4))
    for j, lab in enumerate(target.channel_labels):
        pick[j, full_t.index(lab)] = 1.0
    return pick @ a @ e


def transform_basis(x, target):
    """Change polarization basis of a scattering vector or covariance.

    ``target`` may be a :class:`PolarizationBasis` or a :class:`BasisKind`; a
    bare kind keeps the channel count of the input.
    """
    src = x.basis
    if not src.is_full:
        raise PolError("basis change needs fully polarimetric input (q >= 3)")
    tgt = _target_basis(src, target)
    if tgt.kind == src.kind:
        raise PolError("target basis equals source basis")
    if not tgt.is_full:
        raise PolError("target basis must be fully polarimetric; use select_channels afterwards")
    m = _stored_map(src, tgt)
    if isinstance(x, ScatteringVector):
        return ScatteringVector(tgt, m @ x.values)
    if isinstance(x, PolCovariance):
        return PolCovariance(tgt, compress_full(m @ x.matrix() @ np.conj(m.T)), x.n_samples)
    raise TypeError(f"cannot transform {type(x).__name__}")


def transform_upper(upper, source: PolarizationBasis, target: PolarizationBasis) -> np.ndarray:
    """Batch basis change of stored covariance entries (..., m)."""
    m = _stored_map(source, target)
    full = expand_upper(upper)
    return compress_full(m @ full @ np.conj(m.T))


def selection_indices(basis: PolarizationBasis, subset) -> list[int]:
    subset = list(subset)
    if not subset:
        raise PolError("channel subset must be non-empty")
    if len(set(subset)) != len(subset):
        raise PolError("channel subset has duplicates")
    return [basis.index(lab) for lab in subset]


def select_upper(upper, basis: PolarizationBasis, subset) -> np.ndarray:
    """Principal-submatrix selection on stored entries (..., m)."""
    idx = selection_indices(basis, subset)
    full = expand_upper(upper)
    sub = full[..., idx, :][..., :, idx]
    return compress_full(sub)


def select_channels(x, subset):
    """Principal submatrix / subvector on the given channel labels, in order."""
    basis = x.basis
    idx = selection_indices(basis, subset)
    nb = PolarizationBasis(basis.kind, tuple(subset))
    if isinstance(x, ScatteringVector):
        return ScatteringVector(nb, x.values[idx])
    if isinstance(x, PolCovariance):
        sub = x.matrix()[np.ix_(idx, idx)]
        return PolCovariance(nb, compress_full(sub), x.n_samples)
    raise TypeError(f"cannot select channels of {type(x).__name__}")


# Polarization configurations used for ablations, as (basis kind, channels).
POL_CONFIGS: dict[str, PolarizationBasis] = {
    "full": CIRCULAR,
    "dual-LL.RR": PolarizationBasis(BasisKind.CIRCULAR, ("LL", "RR")),
    "dual-HH.VV": PolarizationBasis(BasisKind.LINEAR, ("HH", "VV")),
    "single-LR": PolarizationBasis(BasisKind.CIRCULAR, ("LR",)),
    "single-RR": PolarizationBasis(BasisKind.CIRCULAR, ("RR",)),
    "single-HH": PolarizationBasis(BasisKind.LINEAR, ("HH",)),
}


def _reduce_upper_exact(upper, source: PolarizationBasis, target: PolarizationBasis) -> np.ndarray:
    if target.kind != source.kind:
        full_t = _FULL[target.kind]
        upper = transform_upper(upper, source, full_t)
        source = full_t
    return select_upper(upper, source, target.channel_labels)


@lru_cache(maxsize=None)
def _reduction_maps(source: PolarizationBasis, target: PolarizationBasis) -> tuple[np.ndarray, np.ndarray]:
    """(A, B) with reduce(u) = u A + conj(u) B, found by probing unit entries.

    The reduction is linear over the reals (lower entries are conjugates), so
    probing each stored entry with 1 and i separates both parts.
    """
    m = n_upper(source.q)
    eye = np.eye(m, dtype=complex)
    re = _reduce_upper_exact(eye, source, target)
    im = _reduce_upper_exact(1j * eye, source, target)
    return (re - 1j * im) / 2, (re + 1j * im) / 2


def reduce_upper(upper, source: PolarizationBasis, target: PolarizationBasis) -> np.ndarray:
    """Derive stored entries in ``target`` (any subset, either basis) from full data."""
    upper = np.asarray(upper, dtype=complex)
    if target == source:
        return upper.copy()
    a, b = _reduction_maps(source, target)
    out = upper @ a + np.conj(upper) @ b
    # diagonal entries are powers: drop rounding residue in their imaginary part
    d = diagonal_positions(target.q)
    out[..., d] = out[..., d].real
    return out
