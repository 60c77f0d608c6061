"""Localized transition expectations between consecutive levels of the tree."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tree
from .algebra import (
    CentralDecomposition,
    FactorBlock,
    LabeledOperator,
    LocalMap,
    NumericalDegeneracyError,
    ResourceGuardError,
    SubalgebraBasis,
    UmegakiMap,
    _reorder,
    apply_local_maps,
    central_decompose,
    embed,
    is_completely_positive,
    superoperator,
    validate_density,
)
from .tree import SiteCoord

DEFAULT_MAX_DIM = 2 ** 14


def children_permutation(k: int, d: int) -> np.ndarray:
    """Superoperator of reversing the child factors in ``B_x ⊗ B_{S(x)}``."""
    dims = (d,) * (k + 1)
    perm = [0] + list(range(k, 0, -1))
    n = d ** (k + 1)
    return superoperator(lambda a: _reorder(a, dims, perm), n)


@dataclass
class SiteMap:
    """A unital CP map ``B_x ⊗ B_{S(x)} -> B_x`` given by its superoperator.

    Used for transitions that are not conditional expectations.
    """

    site: SiteCoord
    j: int
    d: int
    superop: np.ndarray = field(repr=False)

    @property
    def k(self) -> int:
        return self.site.k

    @property
    def children(self) -> tuple[SiteCoord, ...]:
        return tree.direct_successors(self.site)

    def superoperator(self) -> np.ndarray:
        return self.superop

    def __call__(self, a: np.ndarray) -> np.ndarray:
        n = self.d
        return (self.superop @ np.asarray(a, dtype=complex).reshape(-1)).reshape(n, n)


@dataclass
class SiteTransitionExpectation:
    """A localized conditional expectation ``E_x`` kept in canonical block form.

    Block ``ω`` has projection ``P_ω = V_ω V_ω*``, split ``(n_ω, m_ω)`` and a
    state ``φ_ω`` on ``B(H_{ω,1}) ⊗ B_{S(x)}`` given by a density of size
    ``m_ω d^k``. ``E_x(a) = Σ_ω V_ω (Tr[(1 ⊗ ρ_ω)(V_ω* ⊗ 1) a (V_ω ⊗ 1)] ⊗ 1) V_ω*``.
    """

    site: SiteCoord
    j: int
    d: int
    decomposition: CentralDecomposition
    states: list[np.ndarray]
    reconstruction_residual: float = 0.0
    _superop: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.decomposition.ambient_dim != self.d:
            raise ValueError("decomposition does not live on B_x")
        self.map = UmegakiMap(self.decomposition, list(self.states), self.d ** self.k)
        self.states = self.map.states

    @property
    def k(self) -> int:
        return self.site.k

    @property
    def children(self) -> tuple[SiteCoord, ...]:
        return tree.direct_successors(self.site)

    @property
    def labels(self) -> range:
        return range(len(self.decomposition.blocks))

    @property
    def blocks(self) -> list[FactorBlock]:
        return self.decomposition.blocks

    def block(self, label: int) -> FactorBlock:
        if label not in self.labels:
            raise ValueError(f"invalid label {label} at site {self.site.label()!r}")
        return self.decomposition.blocks[label]

    def superoperator(self) -> np.ndarray:
        if self._superop is None:
            self._superop = self.map.superoperator()
        return self._superop

    def __call__(self, a: np.ndarray) -> np.ndarray:
        return self.map(np.asarray(a, dtype=complex))


def canonical_form(E, site: SiteCoord, d: int, j: int | None = None,
                   rng: np.random.Generator | int | None = 0,
                   reverse_children: bool = False,
                   tol: float = 1e-10) -> SiteTransitionExpectation:
    """Recover blocks and block states of a localized conditional expectation.

    ``E`` is a callable on ``d^{k+1}`` square matrices or its superoperator.
    With ``reverse_children`` the input map reads its children in the order
    ``(x,k), ..., (x,1)``.
    """
    k = site.k
    din = d ** (k + 1)
    D = d ** k
    S = np.asarray(E if isinstance(E, np.ndarray) else superoperator(E, din), dtype=complex)
    if S.shape != (d * d, din * din):
        raise ValueError(f"superoperator shape {S.shape} is not B_x ⊗ B_S(x) -> B_x for d={d}, k={k}")
    if reverse_children:
        S = S @ children_permutation(k, d)

    def apply(a):
        return (S @ a.reshape(-1)).reshape(d, d)

    rep = is_completely_positive(apply, din, d)
    if not rep.completely_positive:
        raise ValueError(f"map is not completely positive (Choi min eigenvalue {rep.min_eigenvalue:.3e})")
    if rep.unital_residual > tol:
        raise ValueError(f"map is not unital (residual {rep.unital_residual:.3e})")
    # idempotence: E(E(a) ⊗ 1) = E(a)
    J = superoperator(lambda a: np.kron(a, np.eye(D)), d)
    idem = np.abs(S @ J @ S - S).max()
    if idem > tol:
        raise ValueError(f"map is not idempotent onto B_x (residual {idem:.3e})")

    u, s, _ = np.linalg.svd(S, full_matrices=False)
    r = int(np.sum(s > 1e-9 * max(1.0, s[0])))
    gens = [u[:, i].reshape(d, d) for i in range(r)]
    alg = SubalgebraBasis(d, gens)
    if alg.dim != r:
        raise ValueError("range of the map is not a *-subalgebra")
    dec = central_decompose(alg, rng)

    states = []
    for blk in dec.blocks:
        w = blk.isometry[:, 0]
        c = np.kron(w.conj(), w)
        G = (c @ S).reshape(d, D, d, D)
        U = blk.isometry[:, : blk.m]
        T = np.einsum("piqj,pr,qs->risj", G, U, U.conj())
        rho = T.transpose(2, 3, 0, 1).reshape(blk.m * D, blk.m * D)
        rho = (rho + rho.conj().T) / 2
        validate_density(rho, "recovered block state")
        states.append(rho)
    out = SiteTransitionExpectation(site, site.level if j is None else j, d, dec, states)
    out.reconstruction_residual = float(np.abs(out.superoperator() - S).max())
    if out.reconstruction_residual > 1e-8:
        raise NumericalDegeneracyError(f"canonical reassembly residual {out.reconstruction_residual:.3e}")
    return out


def site_expectation(site: SiteCoord, d: int, decomposition: CentralDecomposition,
                     states: Sequence[np.ndarray], j: int | None = None) -> SiteTransitionExpectation:
    return SiteTransitionExpectation(site, site.level if j is None else j, d, decomposition, list(states))


# --------------------------------------------------------------------------
# whole levels

@dataclass
class LevelTransitionExpectation:
    """``E^{(j)} = ⊗_{x ∈ W_j} E_x`` acting on ``B_{W_j} ⊗ B_{W_{j+1}}``."""

    j: int
    per_site: list
    max_dim: int = DEFAULT_MAX_DIM

    def __post_init__(self):
        if not self.per_site:
            raise ValueError("a level needs at least one site")
        k = self.per_site[0].site.k
        expected = tree.enumerate_level(k, self.j).vertices
        got = tuple(e.site for e in self.per_site)
        if got != expected:
            raise ValueError("per-site maps must cover W_j in lexicographic order")
        ds = {e.d for e in self.per_site}
        if len(ds) != 1:
            raise ValueError("all sites must share one local dimension")

    @property
    def k(self) -> int:
        return self.per_site[0].site.k

    @property
    def d(self) -> int:
        return self.per_site[0].d

    @property
    def sites(self) -> tuple[SiteCoord, ...]:
        return tuple(e.site for e in self.per_site)

    @property
    def next_sites(self) -> tuple[SiteCoord, ...]:
        return tree.enumerate_level(self.k, self.j + 1).vertices

    @property
    def is_canonical(self) -> bool:
        return all(isinstance(e, SiteTransitionExpectation) for e in self.per_site)

    def local_maps(self) -> list[LocalMap]:
        return [LocalMap((e.site,) + e.children, (e.site,), (self.d,), e.superoperator())
                for e in self.per_site]

    def apply(self, a: LabeledOperator) -> LabeledOperator:
        return apply_level(self, a)


def _check_support(a: LabeledOperator, allowed: Sequence[SiteCoord]) -> None:
    bad = set(a.support) - set(allowed)
    if bad:
        raise ValueError(f"support violation at sites {sorted(x.label() for x in bad)}")


def apply_level(E: LevelTransitionExpectation, a: LabeledOperator) -> LabeledOperator:
    """Tensor product of the per-site maps applied to ``a`` on ``W_j ∪ W_{j+1}``."""
    target = E.sites + E.next_sites
    _check_support(a, target)
    side = E.d ** len(target)
    if side > E.max_dim:
        raise ResourceGuardError(f"level operator dimension {side} exceeds cap {E.max_dim}")
    full = embed(a, target, (E.d,) * len(target))
    return apply_local_maps(full, E.local_maps())


def _require_canonical(E: LevelTransitionExpectation) -> None:
    if not E.is_canonical:
        raise ValueError("operation needs canonical per-site data")


def level_labels(E: LevelTransitionExpectation) -> list[tuple[int, ...]]:
    _require_canonical(E)
    return list(itertools.product(*[e.labels for e in E.per_site]))


def _grouped_isometry(blocks: Sequence[FactorBlock]) -> tuple[np.ndarray, int, int]:
    """``⊗ V_x`` with columns reordered from (n_1, m_1, n_2, m_2, ...) to (n_1, n_2, ..., m_1, m_2, ...)."""
    V = np.ones((1, 1), dtype=complex)
    for b in blocks:
        V = np.kron(V, b.isometry)
    col_dims = [x for b in blocks for x in (b.n, b.m)]
    L = len(blocks)
    perm = list(range(0, 2 * L, 2)) + list(range(1, 2 * L, 2))
    Vt = V.reshape((V.shape[0], *col_dims)).transpose([0] + [1 + p for p in perm])
    n = math.prod(b.n for b in blocks)
    m = math.prod(b.m for b in blocks)
    return Vt.reshape(V.shape[0], n * m), n, m


def range_decomposition(E: LevelTransitionExpectation) -> tuple[list[tuple[int, ...]], CentralDecomposition]:
    """Level blocks ``P_ω = ⊗_x P_{ω_x}`` with the grouped factor split.

    The isometry of a level block sends ``(⊗_x H_{ω_x,0}) ⊗ (⊗_x H_{ω_x,1})`` onto
    ``range(P_ω)``; this reorders the interleaved site-by-site tensor factors
    into two groups, stably within each group.
    """
    labels = level_labels(E)
    side = E.d ** len(E.sites)
    if side > E.max_dim:
        raise ResourceGuardError(f"level dimension {side} exceeds cap {E.max_dim}")
    blocks = []
    for lab in labels:
        parts = [e.block(w) for e, w in zip(E.per_site, lab)]
        V, n, m = _grouped_isometry(parts)
        blocks.append(FactorBlock(V @ V.conj().T, n, m, V))
    return labels, CentralDecomposition(side, blocks)


def level_block_state(E: LevelTransitionExpectation, labels: Sequence[int]) -> np.ndarray:
    """Density of ``∏_x φ_{ω_x}`` on ``(⊗_x H_{ω_x,1}) ⊗ B_{W_{j+1}}``."""
    _require_canonical(E)
    labels = tuple(labels)
    if len(labels) != len(E.per_site):
        raise ValueError("one label per site required")
    D = E.d ** E.k
    rho = np.ones((1, 1), dtype=complex)
    dims = []
    for e, w in zip(E.per_site, labels):
        b = e.block(w)
        rho = np.kron(rho, e.states[w])
        dims += [b.m, D]
    L = len(labels)
    perm = list(range(0, 2 * L, 2)) + list(range(1, 2 * L, 2))
    return _reorder(rho, dims, perm)


def apply_level_blockwise(E: LevelTransitionExpectation, a: LabeledOperator) -> LabeledOperator:
    """``Σ_ω P_ω Φ_ω(P_ω a P_ω) P_ω`` evaluated with level blocks and product block states."""
    target = E.sites + E.next_sites
    _check_support(a, target)
    full = embed(a, target, (E.d,) * len(target))
    side = full.size
    if side > E.max_dim:
        raise ResourceGuardError(f"level operator dimension {side} exceeds cap {E.max_dim}")
    labels, dec = range_decomposition(E)
    states = [level_block_state(E, lab) for lab in labels]
    ext = E.d ** len(E.next_sites)
    U = UmegakiMap(dec, states, ext)
    out = U(full.matrix)
    return LabeledOperator(E.sites, (E.d,) * len(E.sites), out)


# --------------------------------------------------------------------------
# ergodic limits

def _null_space(A: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    _, s, vh = np.linalg.svd(A)
    scale = max(1.0, s[0]) if s.size else 1.0
    r = int(np.sum(s > tol * scale))
    return vh[r:].conj().T


class NonConvergentError(ValueError):
    """The eigenvalue 1 of the input carries a nontrivial Jordan block."""


def cesaro_limit(e, dim: int | None = None) -> np.ndarray:
    """Spectral projection of a superoperator onto its eigenvalue-1 eigenspace.

    ``e`` is a square superoperator or a callable on ``dim x dim`` matrices.
    The projection is along the sum of the other generalized eigenspaces, which
    is the limit of ``(1/m) Σ_{h<m} e^h`` whenever that limit exists.
    """
    M = np.asarray(e if isinstance(e, np.ndarray) else superoperator(e, dim), dtype=complex)
    if M.shape[0] != M.shape[1]:
        raise ValueError("superoperator must be square")
    N = M.shape[0]
    A = M - np.eye(N)
    K = _null_space(A)
    Y = _null_space(A.conj().T)
    if K.shape[1] != Y.shape[1]:
        raise NonConvergentError("left and right fixed spaces differ in dimension")
    if K.shape[1] == 0:
        return np.zeros_like(M)
    G = Y.conj().T @ K
    if np.linalg.cond(G) > 1e10:
        raise NonConvergentError("eigenvalue 1 has a Jordan block of size > 1")
    return K @ np.linalg.solve(G, Y.conj().T)


# --------------------------------------------------------------------------
# quasi-conditional expectations

@dataclass
class QuasiConditionalExpectation:
    """``E_j = id_{Λ_{j-1}} ⊗ E^{(j)}`` from ``B_{Λ_{j+1}}`` to ``B_{Λ_j}``."""

    level: LevelTransitionExpectation
    max_dim: int = DEFAULT_MAX_DIM

    @property
    def j(self) -> int:
        return self.level.j

    def __call__(self, a: LabeledOperator) -> LabeledOperator:
        E = self.level
        target = tree.ball(E.k, E.j + 1)
        _check_support(a, target)
        side = E.d ** len(target)
        if side > self.max_dim:
            raise ResourceGuardError(f"operator dimension {side} exceeds cap {self.max_dim}")
        full = embed(a, target, (E.d,) * len(target))
        return apply_local_maps(full, E.local_maps())


def quasi_conditional_expectation(E: LevelTransitionExpectation, j: int | None = None,
                                  max_dim: int = DEFAULT_MAX_DIM) -> QuasiConditionalExpectation:
    if j is not None and j != E.j:
        raise ValueError(f"level map is for j={E.j}, not {j}")
    if E.j < 0:
        raise ValueError("j must be >= 0")
    return QuasiConditionalExpectation(E, max_dim)


def make_level(per_site: Sequence, j: int, max_dim: int = DEFAULT_MAX_DIM) -> LevelTransitionExpectation:
    return LevelTransitionExpectation(j, list(per_site), max_dim)


def map_from_callable(fn: Callable[[np.ndarray], np.ndarray], site: SiteCoord, d: int,
                      j: int | None = None) -> SiteMap:
    return SiteMap(site, site.level if j is None else j, d, superoperator(fn, d ** (site.k + 1)))
