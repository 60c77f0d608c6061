"""Finite-volume quantum Markov states built from level transition expectations.

A ``QmsSpec`` with levels ``j = 0..n_max`` defines one state ``φ`` on
``B_{Λ_{n_max+1}}``:

    φ(a) = ρ0(E^(0)(a_0 ⊗ E^(1)(a_1 ⊗ ... E^(n_max)(a_{n_max} ⊗ a_{n_max+1}))))

Observables on a smaller volume are padded with the identity, so every
restriction ``φ|Λ_n`` comes from the same functional.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tree
from .algebra import (
    DensityState,
    LabeledOperator,
    LocalMap,
    ResourceGuardError,
    apply_local_maps,
    dual_superoperator,
    embed,
    superoperator,
    validate_density,
)
from .transition import (
    DEFAULT_MAX_DIM,
    LevelTransitionExpectation,
    SiteMap,
    cesaro_limit,
)

TAU_MARKOV = 1e-9
BASIS_CUTOFF = 2 ** 10
RANDOM_PROBES = 200


@dataclass
class QmsSpec:
    k: int
    d: int
    rho0: np.ndarray
    levels: list[LevelTransitionExpectation]
    max_dim: int = DEFAULT_MAX_DIM
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.rho0 = np.asarray(self.rho0, dtype=complex)
        if self.rho0.shape != (self.d, self.d):
            raise ValueError("rho0 must be a state on the root")
        validate_density(self.rho0, "rho0")
        for j, lev in enumerate(self.levels):
            if lev.j != j or lev.k != self.k or lev.d != self.d:
                raise ValueError(f"level {j} does not match the tree or local dimension")

    @property
    def n_max(self) -> int:
        return len(self.levels) - 1

    @property
    def depth(self) -> int:
        """Deepest level carrying observables."""
        return len(self.levels)

    def site_dim(self, n: int) -> int:
        return self.d ** len(tree.ball(self.k, n))

    def guard(self, n: int) -> None:
        size = self.site_dim(n)
        if size > self.max_dim:
            raise ResourceGuardError(f"dimension {size} of Λ_{n} exceeds cap {self.max_dim}")


@dataclass
class FiniteVolumeState:
    n: int
    rho: DensityState

    @property
    def matrix(self) -> np.ndarray:
        return self.rho.matrix


def _top_level(a: LabeledOperator) -> int:
    return max((x.level for x in a.support), default=0)


def evaluate_nested(spec: QmsSpec, a: LabeledOperator) -> complex:
    """``φ(a)`` by applying the quasi-conditional expectations from the top level down."""
    top = _top_level(a)
    if top > spec.depth:
        raise ValueError(f"observable reaches level {top}; levels available up to {spec.depth}")
    spec.guard(top)
    sites = tree.ball(spec.k, top)
    op = embed(a, sites, (spec.d,) * len(sites))
    if top < spec.depth:
        op = apply_local_maps(op, _padding_maps(spec.levels[top]))
    for j in range(top - 1, -1, -1):
        op = apply_local_maps(op, spec.levels[j].local_maps())
    return complex(np.trace(spec.rho0 @ op.matrix))


def _padding_maps(level: LevelTransitionExpectation) -> list[LocalMap]:
    """``c -> E_x(c ⊗ 1)`` for each site of the level."""
    d, D = level.d, level.d ** level.k
    return [LocalMap((e.site,), (e.site,), (d,),
                     superoperator(lambda c, e=e: e(np.kron(c, np.eye(D))), d)) for e in level.per_site]


def _dual_maps(level: LevelTransitionExpectation) -> list[LocalMap]:
    d = level.d
    return [LocalMap((e.site,), (e.site,) + e.children, (d,) * (1 + level.k),
                     dual_superoperator(e.superoperator())) for e in level.per_site]


def _boundary_maps(level: LevelTransitionExpectation) -> list[LocalMap]:
    """Duals of ``c -> E_x(c ⊗ 1)`` for each site of the level."""
    return [LocalMap(m.inputs, m.outputs, m.out_dims, dual_superoperator(m.superop))
            for m in _padding_maps(level)]


def unbounded_density(spec: QmsSpec, n: int) -> LabeledOperator:
    """Density of ``a -> ρ0(E^(0)(... E^(n-1)(a)))`` on ``Λ_n`` (no padding above ``n``)."""
    if n > spec.depth:
        raise ValueError(f"n={n} exceeds available depth {spec.depth}")
    key = ("nb", n)
    if key in spec._cache:
        return spec._cache[key]
    spec.guard(n)
    if n == 0:
        rho = LabeledOperator((tree.root(spec.k),), (spec.d,), spec.rho0)
    else:
        prev = unbounded_density(spec, n - 1)
        rho = apply_local_maps(prev, _dual_maps(spec.levels[n - 1]))
    spec._cache[key] = rho
    return rho


def density_matrix(spec: QmsSpec, n: int) -> FiniteVolumeState:
    """Density of ``φ|Λ_n`` with ``Tr(ρ a) = evaluate_nested(spec, a)``."""
    if n < 0 or n > spec.depth:
        raise ValueError(f"n={n} outside 0..{spec.depth}")
    rho = unbounded_density(spec, n)
    if n < spec.depth:
        rho = apply_local_maps(rho, _boundary_maps(spec.levels[n]))
    m = rho.matrix
    m = (m + m.conj().T) / 2
    return FiniteVolumeState(n, DensityState(rho.support, rho.dims, m))


def markov_residual(spec: QmsSpec, j: int, seed: int = 0) -> float:
    """Largest ``|φ(E_j(a)) - φ(a)|`` over a basis of ``B_{Λ_{j+1}}``.

    Uses matrix units when the dimension is at most ``2^10`` and
    ``RANDOM_PROBES`` seeded random hermitian elements of unit operator norm otherwise.
    """
    if j < 0 or j + 1 > spec.depth:
        raise ValueError(f"j={j} outside 0..{spec.depth - 1}")
    spec.guard(j + 1)
    lower = density_matrix(spec, j).rho
    pulled = apply_local_maps(lower, _dual_maps(spec.levels[j]))
    upper = density_matrix(spec, j + 1).rho
    diff = pulled.matrix - upper.matrix
    if diff.shape[0] <= BASIS_CUTOFF:
        return float(np.abs(diff).max())
    rng = np.random.default_rng(seed)
    N = diff.shape[0]
    worst = 0.0
    for _ in range(RANDOM_PROBES):
        g = rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))
        h = (g + g.conj().T) / 2
        h /= np.abs(np.linalg.eigvalsh(h)).max()
        worst = max(worst, abs(np.einsum("ij,ji->", diff, h)))
    return float(worst)


def markov_check(spec: QmsSpec, j: int, tol: float = TAU_MARKOV) -> tuple[bool, float]:
    r = markov_residual(spec, j)
    return r <= tol, r


def initial_state_residual(spec: QmsSpec) -> float:
    """Distance between ``φ|Λ_0`` and the supplied ``ρ0``.

    Nonzero exactly when ``ρ0`` is not invariant under ``c -> E_root(c ⊗ 1)``.
    """
    return float(np.abs(density_matrix(spec, 0).matrix - spec.rho0).max())


def local_faithfulness(state, tol: float = 1e-12) -> tuple[bool, float]:
    m = state.matrix if hasattr(state, "matrix") else np.asarray(state)
    lam = float(np.linalg.eigvalsh((m + m.conj().T) / 2).min())
    return lam > tol, lam


def ergodic_level(level: LevelTransitionExpectation) -> LevelTransitionExpectation:
    """Replace each site map by the one read off the ergodic limit of ``a -> E_x(a) ⊗ 1``."""
    d, D = level.d, level.d ** level.k
    per_site = []
    for e in level.per_site:
        n = d * D
        P = cesaro_limit(lambda a, e=e: np.kron(e(a), np.eye(D)), n)

        def reduced(a, P=P):
            b = (P @ a.reshape(-1)).reshape(d, D, d, D)
            return np.einsum("iaja->ij", b) / D

        per_site.append(SiteMap(e.site, e.j, d, superoperator(reduced, n)))
    return LevelTransitionExpectation(level.j, per_site, level.max_dim)


def with_ergodic_levels(spec: QmsSpec) -> QmsSpec:
    return QmsSpec(spec.k, spec.d, spec.rho0, [ergodic_level(l) for l in spec.levels], spec.max_dim)


def with_initial_state(spec: QmsSpec, rho0: np.ndarray) -> QmsSpec:
    return QmsSpec(spec.k, spec.d, rho0, spec.levels, spec.max_dim)


def state_dimension(spec: QmsSpec, n: int) -> int:
    return math.prod([spec.d] * len(tree.ball(spec.k, n)))
