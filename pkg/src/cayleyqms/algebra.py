"""Finite-dimensional *-algebra toolkit.

Tensor convention used everywhere: a operator on sites ``(s_1, ..., s_L)`` with
local dimensions ``(d_1, ..., d_L)`` is a ``prod(d) x prod(d)`` matrix whose row
index is row-major over the factors (leftmost factor slowest-varying).

Superoperators act on row-major vectorizations: ``vec(T(a)) = S @ a.reshape(-1)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .tree import SiteCoord

TAU_HERM = 1e-10
TAU_NORM = 1e-10
TAU_POS = 1e-10
TAU_PD = 1e-12
TAU_ROUNDTRIP = 1e-10
EIG_GAP = 1e-8
MAX_RETRIES = 5


class NumericalDegeneracyError(RuntimeError):
    """A decomposition could not separate blocks within tolerance."""


class ResourceGuardError(RuntimeError):
    """An operator would exceed the configured dimension cap."""


# --------------------------------------------------------------------------
# labeled operators

@dataclass(frozen=True)
class LabeledOperator:
    support: tuple[SiteCoord, ...]
    dims: tuple[int, ...]
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "support", tuple(self.support))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        m = np.asarray(self.matrix, dtype=complex)
        object.__setattr__(self, "matrix", m)
        if len(self.support) != len(self.dims):
            raise ValueError("support and dims have different lengths")
        if len(set(self.support)) != len(self.support):
            raise ValueError("support sites must be distinct")
        size = math.prod(self.dims)
        if m.shape != (size, size):
            raise ValueError(f"matrix shape {m.shape} does not match dims {self.dims}")

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def dim_of(self, site: SiteCoord) -> int:
        return self.dims[self.support.index(site)]

    def __add__(self, other: LabeledOperator) -> LabeledOperator:
        other = permute(other, self.support)
        return LabeledOperator(self.support, self.dims, self.matrix + other.matrix)

    def __sub__(self, other: LabeledOperator) -> LabeledOperator:
        other = permute(other, self.support)
        return LabeledOperator(self.support, self.dims, self.matrix - other.matrix)

    def __mul__(self, c) -> LabeledOperator:
        return LabeledOperator(self.support, self.dims, self.matrix * c)

    __rmul__ = __mul__

    def __matmul__(self, other: LabeledOperator) -> LabeledOperator:
        other = permute(other, self.support)
        return LabeledOperator(self.support, self.dims, self.matrix @ other.matrix)

    def dag(self) -> LabeledOperator:
        return LabeledOperator(self.support, self.dims, self.matrix.conj().T)

    def sorted(self) -> LabeledOperator:
        return permute(self, sorted(self.support))


class DensityState(LabeledOperator):
    """Positive, trace-one labeled operator."""

    def __post_init__(self):
        super().__post_init__()
        validate_density(self.matrix)


def identity_operator(support: Sequence[SiteCoord], dims: Sequence[int]) -> LabeledOperator:
    return LabeledOperator(tuple(support), tuple(dims), np.eye(math.prod(dims), dtype=complex))


def product_operator(factors: Sequence[tuple[SiteCoord, np.ndarray]]) -> LabeledOperator:
    """Tensor product of single-site matrices in the given order."""
    mat = np.ones((1, 1), dtype=complex)
    for _, f in factors:
        mat = np.kron(mat, f)
    return LabeledOperator(tuple(s for s, _ in factors), tuple(f.shape[0] for _, f in factors), mat)


def _reorder(matrix: np.ndarray, dims: Sequence[int], perm: Sequence[int]) -> np.ndarray:
    """Permute tensor factors: output factor ``i`` is input factor ``perm[i]``."""
    L = len(dims)
    if list(perm) == list(range(L)):
        return matrix
    t = matrix.reshape(tuple(dims) + tuple(dims))
    axes = list(perm) + [L + p for p in perm]
    size = matrix.shape[0]
    return t.transpose(axes).reshape(size, size)


def permute(a: LabeledOperator, order: Sequence[SiteCoord]) -> LabeledOperator:
    order = tuple(order)
    if order == a.support:
        return a
    if set(order) != set(a.support) or len(order) != len(a.support):
        raise ValueError("permute requires the same set of sites")
    perm = [a.support.index(s) for s in order]
    dims = tuple(a.dims[p] for p in perm)
    return LabeledOperator(order, dims, _reorder(a.matrix, a.dims, perm))


def embed(a: LabeledOperator, target_support: Sequence[SiteCoord],
          target_dims: Sequence[int] | None = None) -> LabeledOperator:
    """Tensor ``a`` with identities on the missing sites and reorder to ``target_support``.

    ``target_dims`` gives the local dimensions along ``target_support``; when
    omitted every missing site gets the common local dimension of ``a``.
    """
    target_support = tuple(target_support)
    present = set(a.support)
    if not present.issubset(target_support):
        extra = sorted(present - set(target_support))
        raise ValueError(f"support not contained in target: {extra}")
    if target_dims is None:
        if len(set(a.dims)) != 1:
            raise ValueError("target_dims required for operators with mixed local dimensions")
        target_dims = [a.dims[0]] * len(target_support)
    target_dims = tuple(int(d) for d in target_dims)
    for s, d in zip(target_support, target_dims):
        if s in present and a.dim_of(s) != d:
            raise ValueError(f"dimension mismatch at {s}")
    missing = [(s, d) for s, d in zip(target_support, target_dims) if s not in present]
    extra_dim = math.prod(d for _, d in missing)
    mat = np.kron(a.matrix, np.eye(extra_dim, dtype=complex)) if missing else a.matrix
    full = LabeledOperator(a.support + tuple(s for s, _ in missing),
                           a.dims + tuple(d for _, d in missing), mat)
    return permute(full, target_support)


def partial_trace(a: LabeledOperator, keep: Iterable[SiteCoord]) -> LabeledOperator:
    """Trace out every site not in ``keep``; kept sites stay in their original order."""
    keep = set(keep)
    if not keep.issubset(a.support):
        raise ValueError("keep is not a subset of the support")
    kept = [s for s in a.support if s in keep]
    gone = [s for s in a.support if s not in keep]
    if not gone:
        return a
    b = permute(a, kept + gone)
    K = math.prod(b.dims[: len(kept)])
    G = math.prod(b.dims[len(kept):])
    mat = np.einsum("ijkj->ik", b.matrix.reshape(K, G, K, G))
    return LabeledOperator(tuple(kept), b.dims[: len(kept)], mat)


def expectation(rho: LabeledOperator, a: LabeledOperator) -> complex:
    """``Tr(rho a)`` after embedding ``a`` into the support of ``rho``."""
    a = embed(a, rho.support, rho.dims)
    return complex(np.einsum("ij,ji->", rho.matrix, a.matrix))


# --------------------------------------------------------------------------
# superoperators

def superoperator(T: Callable[[np.ndarray], np.ndarray], din: int) -> np.ndarray:
    """Matrix of a linear map on ``din x din`` matrices (row-major vectorization)."""
    cols = []
    for i in range(din):
        for j in range(din):
            e = np.zeros((din, din), dtype=complex)
            e[i, j] = 1.0
            cols.append(np.asarray(T(e), dtype=complex).reshape(-1))
    return np.stack(cols, axis=1)


def apply_superoperator(S: np.ndarray, a: np.ndarray) -> np.ndarray:
    dout = math.isqrt(S.shape[0])
    return (S @ a.reshape(-1)).reshape(dout, dout)


def dual_superoperator(S: np.ndarray) -> np.ndarray:
    """Superoperator of the trace-dual map ``Tr(T*(t) a) = Tr(t T(a))``."""
    dout = math.isqrt(S.shape[0])
    din = math.isqrt(S.shape[1])
    return S.reshape(dout, dout, din, din).transpose(3, 2, 1, 0).reshape(din * din, dout * dout)


@dataclass(frozen=True)
class LocalMap:
    """A superoperator from the sites ``inputs`` to the sites ``outputs``."""

    inputs: tuple[SiteCoord, ...]
    outputs: tuple[SiteCoord, ...]
    out_dims: tuple[int, ...]
    superop: np.ndarray = field(repr=False)


def apply_local_maps(a: LabeledOperator, maps: Sequence[LocalMap],
                     max_dim: int | None = None) -> LabeledOperator:
    """Apply a tensor product of local maps; sites outside every map pass through.

    The result is returned in canonical site order.
    """
    used = [s for m in maps for s in m.inputs]
    if len(set(used)) != len(used):
        raise ValueError("local maps overlap")
    if not set(used).issubset(a.support):
        raise ValueError("local map input outside operator support")
    passing = [s for s in a.support if s not in set(used)]
    b = permute(a, passing + used)
    P = math.prod(b.dims[: len(passing)])
    in_sizes, pos = [], len(passing)
    for m in maps:
        in_sizes.append(math.prod(b.dims[pos: pos + len(m.inputs)]))
        pos += len(m.inputs)
    out_sizes = [math.prod(m.out_dims) for m in maps]
    out_total = P * math.prod(out_sizes)
    if max_dim is not None and out_total > max_dim:
        raise ResourceGuardError(f"operator dimension {out_total} exceeds cap {max_dim}")
    G = len(maps)
    t = b.matrix.reshape((P, *in_sizes, P, *in_sizes))
    axes = [0, G + 1]
    for g in range(G):
        axes += [1 + g, G + 2 + g]
    t = t.transpose(axes).reshape((P * P, *[s * s for s in in_sizes]))
    for g, m in enumerate(maps):
        t = np.moveaxis(np.tensordot(m.superop, t, axes=([1], [1 + g])), 0, 1 + g)
    t = t.reshape((P, P, *[x for s in out_sizes for x in (s, s)]))
    axes = [0] + [2 + 2 * g for g in range(G)] + [1] + [3 + 2 * g for g in range(G)]
    mat = t.transpose(axes).reshape(out_total, out_total)
    support = tuple(passing) + tuple(s for m in maps for s in m.outputs)
    dims = b.dims[: len(passing)] + tuple(d for m in maps for d in m.out_dims)
    return LabeledOperator(support, dims, mat).sorted()


# --------------------------------------------------------------------------
# subalgebras and their central decomposition

def _span(mats: Sequence[np.ndarray], tol: float = 1e-10) -> list[np.ndarray]:
    """Hilbert-Schmidt orthonormal basis of the linear span of ``mats``."""
    if not mats:
        return []
    d = mats[0].shape[0]
    rows = np.stack([m.reshape(-1) for m in mats])
    _, s, vh = np.linalg.svd(rows, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return []
    r = int(np.sum(s > tol * max(1.0, s[0])))
    return [vh[i].reshape(d, d) for i in range(r)]


def _in_span_residual(basis: Sequence[np.ndarray], x: np.ndarray) -> float:
    if not basis:
        return float(np.linalg.norm(x))
    B = np.stack([b.reshape(-1) for b in basis], axis=1)
    coef, *_ = np.linalg.lstsq(B, x.reshape(-1), rcond=None)
    return float(np.linalg.norm(B @ coef - x.reshape(-1)))


@dataclass
class SubalgebraBasis:
    """A unital *-subalgebra of ``M_ambient_dim`` given by generators.

    Adjoints and the identity are added on construction; ``basis`` is an
    orthonormal basis of the generated algebra.
    """

    ambient_dim: int
    generators: list[np.ndarray]
    basis: list[np.ndarray] = field(init=False, repr=False)

    def __post_init__(self):
        d = self.ambient_dim
        gens = [np.asarray(g, dtype=complex) for g in self.generators]
        for g in gens:
            if g.shape != (d, d):
                raise ValueError(f"generator shape {g.shape} != ({d}, {d})")
        gens = gens + [g.conj().T for g in gens] + [np.eye(d, dtype=complex)]
        self.generators = gens
        basis = _span(gens)
        while True:
            prods = [x @ y for x in basis for y in basis]
            new = _span(basis + prods)
            if len(new) == len(basis):
                break
            basis = new
        self.basis = basis

    @property
    def dim(self) -> int:
        return len(self.basis)

    def contains(self, x: np.ndarray, tol: float = 1e-9) -> bool:
        return _in_span_residual(self.basis, x) <= tol * max(1.0, np.linalg.norm(x))


@dataclass
class FactorBlock:
    """One minimal central projection ``P`` and the split ``range(P) = H_0 ⊗ H_1``.

    ``isometry`` maps ``C^n ⊗ C^m`` (``n`` slow) onto ``range(P)``; the algebra
    compressed by ``P`` is carried onto ``M_n ⊗ 1_m``.
    """

    projection: np.ndarray
    n: int
    m: int
    isometry: np.ndarray

    @property
    def dims(self) -> tuple[int, int]:
        return (self.n, self.m)

    @property
    def rank(self) -> int:
        return self.n * self.m


@dataclass
class CentralDecomposition:
    ambient_dim: int
    blocks: list[FactorBlock]

    def check(self, tol: float = TAU_HERM) -> float:
        """Largest violation of orthogonality, completeness and isometry relations."""
        d = self.ambient_dim
        res = np.linalg.norm(sum(b.projection for b in self.blocks) - np.eye(d), 2)
        for i, bi in enumerate(self.blocks):
            V = bi.isometry
            res = max(res, np.linalg.norm(V.conj().T @ V - np.eye(bi.rank), 2))
            res = max(res, np.linalg.norm(V @ V.conj().T - bi.projection, 2))
            for bj in self.blocks[i + 1:]:
                res = max(res, np.linalg.norm(bi.projection @ bj.projection, 2))
        return float(res)

    def factor_residual(self, S: SubalgebraBasis) -> float:
        """Max distance of ``V* s V`` from ``M_n ⊗ 1`` over the basis of ``S``."""
        res = 0.0
        for blk in self.blocks:
            for s in S.basis:
                c = blk.isometry.conj().T @ s @ blk.isometry
                t = c.reshape(blk.n, blk.m, blk.n, blk.m)
                core = np.einsum("iaja->ij", t) / blk.m
                res = max(res, float(np.abs(c - np.kron(core, np.eye(blk.m))).max()))
        return res


def _cluster(evals: np.ndarray, gap: float = EIG_GAP) -> list[list[int]]:
    """Group indices of ascending eigenvalues separated by more than ``gap``."""
    groups = [[0]]
    for i in range(1, len(evals)):
        if evals[i] - evals[i - 1] > gap:
            groups.append([i])
        else:
            groups[-1].append(i)
    return groups


def _random_hermitian(rng: np.random.Generator, basis: Sequence[np.ndarray]) -> np.ndarray:
    c = rng.standard_normal(len(basis)) + 1j * rng.standard_normal(len(basis))
    x = sum(ci * b for ci, b in zip(c, basis))
    return (x + x.conj().T) / 2


def center_basis(S: SubalgebraBasis) -> list[np.ndarray]:
    """Basis of the center: elements of ``S`` commuting with all of ``S``."""
    B = S.basis
    cols = []
    for bi in B:
        cols.append(np.concatenate([(bi @ bj - bj @ bi).reshape(-1) for bj in B]))
    M = np.stack(cols, axis=1)
    _, s, vh = np.linalg.svd(M)
    scale = max(1.0, s[0]) if s.size else 1.0
    null_mask = np.ones(vh.shape[0], dtype=bool)
    null_mask[: int(np.sum(s > 1e-9 * scale))] = False
    coeffs = vh[null_mask].conj()
    return _span([sum(c * b for c, b in zip(row, B)) for row in coeffs])


def _factor_block(S: SubalgebraBasis, P: np.ndarray, W: np.ndarray,
                  rng: np.random.Generator) -> FactorBlock:
    r = W.shape[1]
    comp = _span([W.conj().T @ b @ W for b in S.basis])
    n = math.isqrt(len(comp))
    if n * n != len(comp) or r % n:
        raise NumericalDegeneracyError(f"compressed algebra of dim {len(comp)} is not a factor block of rank {r}")
    m = r // n
    for _ in range(MAX_RETRIES):
        h = _random_hermitian(rng, comp)
        w, v = np.linalg.eigh(h)
        groups = _cluster(w)
        if len(groups) != n or any(len(g) != m for g in groups):
            continue
        F = v[:, groups[0]]
        Q1 = F @ F.conj().T
        x = sum(c * b for c, b in zip(rng.standard_normal(len(comp)) + 1j * rng.standard_normal(len(comp)), comp))
        cols = [F]
        ok = True
        for g in groups[1:]:
            G = v[:, g]
            T = G @ G.conj().T @ x @ Q1
            c = math.sqrt(max(np.real(np.trace(T.conj().T @ T)) / m, 0.0))
            if c < 1e-6:
                ok = False
                break
            cols.append(T @ F / c)
        if not ok:
            continue
        Vb = np.stack(cols, axis=1).reshape(r, n * m)
        return FactorBlock(P, n, m, W @ Vb)
    raise NumericalDegeneracyError("could not find a matrix-unit system for a block")


def central_decompose(S: SubalgebraBasis, rng: np.random.Generator | int | None = 0) -> CentralDecomposition:
    """Minimal central projections of ``S`` and the factor split of each block."""
    rng = np.random.default_rng(rng)
    Z = center_basis(S)
    d = S.ambient_dim
    for _ in range(MAX_RETRIES):
        h = _random_hermitian(rng, Z)
        w, v = np.linalg.eigh(h)
        groups = _cluster(w)
        if len(groups) != len(Z):
            continue
        blocks = []
        for g in groups:
            W = v[:, g]
            blocks.append(_factor_block(S, W @ W.conj().T, W, rng))
        dec = CentralDecomposition(d, blocks)
        if dec.check() > 1e-8:
            raise NumericalDegeneracyError(f"central projections fail idempotency checks ({dec.check():.2e})")
        if dec.factor_residual(S) > 1e-9:
            raise NumericalDegeneracyError("factor isometries do not split the algebra")
        return dec
    raise NumericalDegeneracyError("random central element failed to separate the blocks")


def decomposition_from_isometries(isometries: Sequence[np.ndarray], dims: Sequence[tuple[int, int]]) -> CentralDecomposition:
    """Build a decomposition from given block isometries (columns ``C^n ⊗ C^m``)."""
    blocks = []
    for V, (n, m) in zip(isometries, dims):
        V = np.asarray(V, dtype=complex)
        if V.shape[1] != n * m:
            raise ValueError("isometry width does not match block dims")
        blocks.append(FactorBlock(V @ V.conj().T, n, m, V))
    dec = CentralDecomposition(blocks[0].isometry.shape[0], blocks)
    if dec.check() > 1e-8:
        raise ValueError("isometries do not form an orthogonal resolution of the identity")
    return dec


def standard_decomposition(dims: Sequence[tuple[int, int]], unitary: np.ndarray | None = None) -> CentralDecomposition:
    """Blocks stacked along the computational basis, optionally rotated by ``unitary``."""
    d = sum(n * m for n, m in dims)
    U = np.eye(d, dtype=complex) if unitary is None else np.asarray(unitary, dtype=complex)
    isos, start = [], 0
    for n, m in dims:
        isos.append(U[:, start: start + n * m])
        start += n * m
    return decomposition_from_isometries(isos, dims)


def range_algebra(D: CentralDecomposition) -> SubalgebraBasis:
    """The algebra ``⊕ V_i (M_n ⊗ 1) V_i*`` described by a decomposition."""
    gens = []
    for b in D.blocks:
        for i in range(b.n):
            for j in range(b.n):
                e = np.zeros((b.n, b.n), dtype=complex)
                e[i, j] = 1
                gens.append(b.isometry @ np.kron(e, np.eye(b.m)) @ b.isometry.conj().T)
    return SubalgebraBasis(D.ambient_dim, gens)


# --------------------------------------------------------------------------
# conditional expectations

def validate_density(rho: np.ndarray, name: str = "state") -> None:
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"{name}: density must be square")
    if np.abs(rho - rho.conj().T).max() > TAU_HERM:
        raise ValueError(f"{name}: density is not hermitian")
    if abs(np.trace(rho) - 1) > TAU_NORM:
        raise ValueError(f"{name}: density does not have unit trace")
    if np.linalg.eigvalsh((rho + rho.conj().T) / 2).min() < -TAU_POS:
        raise ValueError(f"{name}: density is not positive")


@dataclass
class UmegakiMap:
    """``E(x) = Σ_i P_i Φ_i(P_i x P_i) P_i`` with ``Φ_i(a ⊗ ā ⊗ b) = φ_i(ā ⊗ b) a ⊗ 1``.

    The map goes from ``M_d ⊗ M_ext`` to ``M_d``; ``states[i]`` is the density
    of ``φ_i`` on ``M_{m_i} ⊗ M_ext``.
    """

    decomposition: CentralDecomposition
    states: list[np.ndarray]
    ext_dim: int = 1

    def __post_init__(self):
        if len(self.states) != len(self.decomposition.blocks):
            raise ValueError("one state per block required")
        self.states = [np.asarray(s, dtype=complex) for s in self.states]
        for i, (b, s) in enumerate(zip(self.decomposition.blocks, self.states)):
            if s.shape != (b.m * self.ext_dim,) * 2:
                raise ValueError(f"state {i} has shape {s.shape}, expected {(b.m * self.ext_dim,) * 2}")
            validate_density(s, f"block state {i}")

    @property
    def in_dim(self) -> int:
        return self.decomposition.ambient_dim * self.ext_dim

    @property
    def out_dim(self) -> int:
        return self.decomposition.ambient_dim

    def __call__(self, a: np.ndarray) -> np.ndarray:
        e = self.ext_dim
        out = np.zeros((self.out_dim, self.out_dim), dtype=complex)
        for b, rho in zip(self.decomposition.blocks, self.states):
            Ve = np.kron(b.isometry, np.eye(e))
            A = (Ve.conj().T @ a @ Ve).reshape(b.n, b.m * e, b.n, b.m * e)
            core = np.einsum("paqb,ba->pq", A, rho)
            out += b.isometry @ np.kron(core, np.eye(b.m)) @ b.isometry.conj().T
        return out

    def superoperator(self) -> np.ndarray:
        return superoperator(self, self.in_dim)


def umegaki_from_block_states(D: CentralDecomposition, states: Sequence[np.ndarray], ext_dim: int = 1) -> UmegakiMap:
    return UmegakiMap(D, list(states), ext_dim)


@dataclass(frozen=True)
class CPReport:
    completely_positive: bool
    min_eigenvalue: float
    unital_residual: float


def choi_matrix(T: Callable[[np.ndarray], np.ndarray], din: int) -> np.ndarray:
    blocks = []
    for i in range(din):
        row = []
        for j in range(din):
            e = np.zeros((din, din), dtype=complex)
            e[i, j] = 1
            row.append(np.asarray(T(e), dtype=complex))
        blocks.append(row)
    return np.block(blocks)


def is_completely_positive(T: Callable[[np.ndarray], np.ndarray], din: int,
                           dout: int | None = None, tol: float = TAU_POS) -> CPReport:
    """Choi test; also reports ``‖T(1) - 1‖``."""
    C = choi_matrix(T, din)
    if dout is not None and C.shape[0] != din * dout:
        raise ValueError(f"map output dimension {C.shape[0] // din} != {dout}")
    dout = C.shape[0] // din
    lam = float(np.linalg.eigvalsh((C + C.conj().T) / 2).min())
    one = np.asarray(T(np.eye(din, dtype=complex)))
    unit = float(np.linalg.norm(one - np.eye(dout), 2)) if one.shape == (dout, dout) else math.inf
    return CPReport(lam >= -tol, lam, unit)


# --------------------------------------------------------------------------
# hermitian calculus

def operator_norm(a: np.ndarray) -> float:
    """Largest singular value, from the spectrum of ``a* a``."""
    a = np.asarray(a)
    if a.size == 0:
        return 0.0
    w = np.linalg.eigvalsh(a.conj().T @ a)
    return float(math.sqrt(max(w[-1], 0.0)))


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def hermitian_calculus(a, fn: str):
    """``exp`` or ``log`` of a hermitian matrix (or labeled operator) by eigendecomposition."""
    labeled = isinstance(a, LabeledOperator)
    m = a.matrix if labeled else np.asarray(a, dtype=complex)
    if np.abs(m - m.conj().T).max(initial=0.0) > TAU_HERM:
        raise ValueError("operator is not hermitian")
    w, v = np.linalg.eigh((m + m.conj().T) / 2)
    if fn == "exp":
        f = np.exp(w)
    elif fn == "log":
        if w.min() <= TAU_PD:
            raise ValueError(f"operator is not positive definite (min eigenvalue {w.min():.3e})")
        f = np.log(w)
    else:
        raise ValueError(f"unknown function {fn!r}")
    out = (v * f) @ v.conj().T
    if labeled:
        return LabeledOperator(a.support, a.dims, out)
    return out


# --------------------------------------------------------------------------
# random inputs

def random_unitary(rng: np.random.Generator, d: int) -> np.ndarray:
    z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / math.sqrt(2)
    q, r = np.linalg.qr(z)
    ph = np.diag(r) / np.abs(np.diag(r))
    return q * ph


def random_density(rng: np.random.Generator, d: int, floor: float = 0.05) -> np.ndarray:
    """Faithful random density; ``floor`` mixes in the maximally mixed state."""
    g = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    rho = g @ g.conj().T
    rho = rho / np.trace(rho)
    rho = (1 - floor) * rho + floor * np.eye(d) / d
    return (rho + rho.conj().T) / 2
