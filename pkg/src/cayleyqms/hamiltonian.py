"""Potentials of locally faithful Markov states and commuting interaction decompositions.

For a canonical QMS the density on ``Λ_n`` is block diagonal over label
configurations and each block is a tensor product of factor states, so

    -log ρ_{Λ_n} = H_{W_0} + Σ_{j<n} H_{W_j,W_{j+1}} + Ĥ_{W_n}

with every term a pinched sum of per-block logarithms.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np

from . import tree
from .algebra import (
    LabeledOperator,
    _reorder,
    commutator,
    embed,
    hermitian_calculus,
    operator_norm,
    partial_trace,
    superoperator,
)
from .disintegration import _boundary_eta, _eta_site, _kron_all, site_maps
from .qms import QmsSpec, density_matrix
from .transition import (
    DEFAULT_MAX_DIM,
    LevelTransitionExpectation,
    SiteMap,
    canonical_form,
)
from .tree import SiteCoord

TAU_COMMUTE = 1e-8


class CommutationError(ValueError):
    """Interaction terms fail the commutation precondition."""


def potential_from_state(state) -> LabeledOperator:
    """``h = -log ρ``."""
    rho = state.rho if hasattr(state, "rho") else state
    if not isinstance(rho, LabeledOperator):
        raise TypeError("expected a labeled density")
    return hermitian_calculus(rho, "log") * -1.0


def gibbs_density(h: LabeledOperator) -> LabeledOperator:
    return hermitian_calculus(h * -1.0, "exp")


@dataclass
class InteractionDecomposition:
    """Root term, per-vertex bond terms ``H_{x,S(x)}`` and per-vertex boundary terms ``Ĥ_x``.

    Bond terms exist for ``x`` in ``Λ_{n-1}``; boundary terms for ``x`` in ``Λ_n``.
    """

    k: int
    d: int
    n: int
    root_term: LabeledOperator
    bond_terms: dict[tuple, LabeledOperator]
    hat_terms: dict[tuple, LabeledOperator]
    max_dim: int = DEFAULT_MAX_DIM

    def bond(self, x: SiteCoord) -> LabeledOperator:
        return self.bond_terms[x.path]

    def hat(self, x: SiteCoord) -> LabeledOperator:
        return self.hat_terms[x.path]

    def _sum(self, terms: list[LabeledOperator], sites) -> LabeledOperator:
        sites = tuple(sites)
        dims = (self.d,) * len(sites)
        size = self.d ** len(sites)
        if size > self.max_dim:
            raise ValueError(f"dimension {size} exceeds cap {self.max_dim}")
        out = np.zeros((size, size), dtype=complex)
        for t in terms:
            out += embed(t, sites, dims).matrix
        return LabeledOperator(sites, dims, out)

    def level_bond(self, j: int, sites=None) -> LabeledOperator:
        """``H_{W_j,W_{j+1}} = Σ_{x∈W_j} H_{x,S(x)}``."""
        if not 0 <= j < self.n:
            raise ValueError(f"bond levels are 0..{self.n - 1}")
        sites = tree.levels_between(self.k, j, j + 1) if sites is None else sites
        return self._sum([self.bond(x) for x in tree.enumerate_level(self.k, j)], sites)

    def level_hat(self, j: int, sites=None) -> LabeledOperator:
        """``Ĥ_{W_j} = Σ_{x∈W_j} Ĥ_x``."""
        if not 0 <= j <= self.n:
            raise ValueError(f"boundary levels are 0..{self.n}")
        sites = tree.enumerate_level(self.k, j).vertices if sites is None else sites
        return self._sum([self.hat(x) for x in tree.enumerate_level(self.k, j)], sites)

    def total(self, n: int | None = None) -> LabeledOperator:
        """``H_{W_0} + Σ_{j<n} H_{W_j,W_{j+1}} + Ĥ_{W_n}`` on ``Λ_n``."""
        n = self.n if n is None else n
        if not 0 <= n <= self.n:
            raise ValueError(f"n must lie in 0..{self.n}")
        sites = tree.ball(self.k, n)
        terms = [self.root_term] + [self.bond(x) for x in tree.ball(self.k, n - 1)] if n > 0 else [self.root_term]
        terms += [self.hat(y) for y in tree.enumerate_level(self.k, n)]
        return self._sum(terms, sites)

    def to_json(self) -> str:
        def enc(op: LabeledOperator) -> dict:
            return {
                "support": [x.label() for x in op.support],
                "matrix": [[[float(v.real), float(v.imag)] for v in row] for row in op.matrix],
            }
        doc = {
            "k": self.k, "d": self.d, "n": self.n,
            "root": enc(self.root_term),
            "bonds": [{"level": len(p), "site": ".".join(map(str, p)), **enc(t)} for p, t in self.bond_terms.items()],
            "hats": [{"level": len(p), "site": ".".join(map(str, p)), **enc(t)} for p, t in self.hat_terms.items()],
        }
        return json.dumps(doc)


def _pinched_site_term(x: SiteCoord, blocks, logs, slot: int, d: int) -> LabeledOperator:
    """``Σ_ω V_ω (h_ω on factor ``slot`` ⊗ 1) V_ω*`` on the single site ``x``."""
    out = np.zeros((d, d), dtype=complex)
    for b, h in zip(blocks, logs):
        core = np.kron(h, np.eye(b.m)) if slot == 0 else np.kron(np.eye(b.n), h)
        out += b.isometry @ core @ b.isometry.conj().T
    return LabeledOperator((x,), (d,), out)


def decompose(spec: QmsSpec, n: int) -> InteractionDecomposition:
    """Per-block potentials assembled into root, bond and boundary terms on ``Λ_n``."""
    if not 0 <= n <= spec.n_max:
        raise ValueError(f"n must lie in 0..{spec.n_max}")
    maps = site_maps(spec)
    r = tree.root(spec.k)
    rho0 = density_matrix(spec, 0).matrix
    root_logs = []
    for w, b in enumerate(maps[r].blocks):
        c = (b.isometry.conj().T @ rho0 @ b.isometry).reshape(b.n, b.m, b.n, b.m)
        root_logs.append(-hermitian_calculus(np.einsum("iaja->ij", c), "log"))
    root_term = _pinched_site_term(r, maps[r].blocks, root_logs, 0, spec.d)
    hats = {}
    for x in tree.ball(spec.k, n):
        e = maps[x]
        logs = [-hermitian_calculus(_boundary_eta(e, w), "log") for w in e.labels]
        hats[x.path] = _pinched_site_term(x, e.blocks, logs, 1, spec.d)
    bonds = {}
    if n > 0:
        for x in tree.ball(spec.k, n - 1):
            e = maps[x]
            kids = tree.direct_successors(x)
            support = (x,) + kids
            size = spec.d ** len(support)
            out = np.zeros((size, size), dtype=complex)
            for w in e.labels:
                b = e.block(w)
                for sig in itertools.product(*[maps[c].labels for c in kids]):
                    cb = [maps[c].block(s) for c, s in zip(kids, sig)]
                    raw, p = _eta_site(e, w, cb)
                    if p <= 0:
                        raise ValueError(f"zero weight at {x.label()!r}")
                    h = -hermitian_calculus(raw, "log")
                    # slots (N_ω, N̄_ω, N_σ1, N̄_σ1, ...); h lives on (N̄_ω, N_σ1, N_σ2, ...)
                    K = len(cb)
                    rest = [b.n] + [c.m for c in cb]
                    local = np.kron(h, np.eye(int(np.prod(rest))))
                    src_dims = [b.m] + [c.n for c in cb] + rest
                    src = ["m_x"] + [f"n{i}" for i in range(K)] + ["n_x"] + [f"m{i}" for i in range(K)]
                    tgt = ["n_x", "m_x"] + [s for i in range(K) for s in (f"n{i}", f"m{i}")]
                    local = _reorder(local, src_dims, [src.index(t) for t in tgt])
                    V = _kron_all([b.isometry] + [c.isometry for c in cb])
                    out += V @ local @ V.conj().T
            bonds[x.path] = LabeledOperator(support, (spec.d,) * len(support), out)
    return InteractionDecomposition(spec.k, spec.d, n, root_term, bonds, hats, spec.max_dim)


def reassembly_residual(spec: QmsSpec, D: InteractionDecomposition, n: int | None = None) -> float:
    """Max entry of ``h_{Λ_n} - (H_{W_0} + Σ H_{W_j,W_{j+1}} + Ĥ_{W_n})``."""
    n = D.n if n is None else n
    h = potential_from_state(density_matrix(spec, n))
    return float(np.abs(h.matrix - D.total(n).matrix).max())


def _comm(D: InteractionDecomposition, a: LabeledOperator, b: LabeledOperator) -> float:
    sites = tree.sort_sites(set(a.support) | set(b.support))
    dims = (D.d,) * len(sites)
    return operator_norm(commutator(embed(a, sites, dims).matrix, embed(b, sites, dims).matrix))


def commutation_residuals(D: InteractionDecomposition) -> dict[str, float]:
    """Operator norms of the four commutators, maximized over available levels.

    ``root_bond``: ``[H_{W_0}, H_{W_0,W_1}]``; ``bond_hat``: ``[H_{W_j,W_{j+1}}, Ĥ_{W_{j+1}}]``;
    ``root_hat``: ``[H_{W_0}, Ĥ_{W_0}]``; ``bond_bond``: ``[H_{W_j,W_{j+1}}, H_{W_{j+1},W_{j+2}}]``.
    """
    out = {"root_bond": 0.0, "bond_hat": 0.0, "root_hat": 0.0, "bond_bond": 0.0}
    out["root_hat"] = _comm(D, D.root_term, D.hat(tree.root(D.k)))
    if D.n >= 1:
        out["root_bond"] = _comm(D, D.root_term, D.level_bond(0))
    for j in range(D.n):
        out["bond_hat"] = max(out["bond_hat"], _comm(D, D.level_bond(j), D.level_hat(j + 1)))
    for j in range(D.n - 1):
        out["bond_bond"] = max(out["bond_bond"], _comm(D, D.level_bond(j), D.level_bond(j + 1)))
    return out


def _site_commutators(D: InteractionDecomposition, x: SiteCoord) -> float:
    H = D.bond(x)
    res = _comm(D, H, D.hat(x))
    for c in tree.direct_successors(x):
        res = max(res, _comm(D, H, D.hat(c)))
    return res


def site_transition(D: InteractionDecomposition, x: SiteCoord) -> np.ndarray:
    """Superoperator of ``a -> Tr_{S(x)}(A* a A)``, ``A = e^{-H_{x,S(x)}/2} e^{-Ĥ_{S(x)}/2} e^{Ĥ_x/2}``."""
    kids = tree.direct_successors(x)
    support = (x,) + kids
    dims = (D.d,) * len(support)
    H = embed(D.bond(x), support, dims).matrix
    hat_S = sum(embed(D.hat(c), support, dims).matrix for c in kids)
    hat_x = embed(D.hat(x), support, dims).matrix
    A = hermitian_calculus(-0.5 * H, "exp") @ hermitian_calculus(-0.5 * hat_S, "exp") @ hermitian_calculus(0.5 * hat_x, "exp")
    Dk = D.d ** len(kids)

    def E(a):
        b = A.conj().T @ a @ A
        return np.einsum("iaja->ij", b.reshape(D.d, Dk, D.d, Dk))

    return superoperator(E, D.d ** len(support))


def transition_from_hamiltonian(D: InteractionDecomposition, j: int, pinch: dict | None = None,
                                tol: float = TAU_COMMUTE, rng=0) -> LevelTransitionExpectation:
    """Level map built from the commuting terms.

    With ``pinch`` (site path -> list of orthogonal projections summing to one)
    each site map is followed by ``c -> Σ_ω P_ω c P_ω`` and brought to canonical form.
    """
    if not 0 <= j < D.n:
        raise ValueError(f"transitions exist for j in 0..{D.n - 1}")
    per_site = []
    for x in tree.enumerate_level(D.k, j):
        r = _site_commutators(D, x)
        if r > tol:
            raise CommutationError(f"interaction terms at {x.label()!r} do not commute ({r:.3e})")
        S = site_transition(D, x)
        unit = np.abs((S @ np.eye(D.d ** (D.k + 1)).reshape(-1)).reshape(D.d, D.d) - np.eye(D.d)).max()
        if unit > 1e-9:
            raise ValueError(f"transition at {x.label()!r} is not unital ({unit:.3e})")
        if pinch is not None:
            projs = pinch[x.path]
            Pin = superoperator(lambda c: sum(P @ c @ P for P in projs), D.d)
            per_site.append(canonical_form(Pin @ S, x, D.d, j, rng=rng))
        else:
            per_site.append(SiteMap(x, j, D.d, S))
    return LevelTransitionExpectation(j, per_site, D.max_dim)


def root_state(D: InteractionDecomposition) -> np.ndarray:
    r = tree.root(D.k)
    rho = hermitian_calculus(-(D.root_term.matrix + D.hat(r).matrix), "exp")
    return rho / np.trace(rho)


def qms_from_hamiltonian(D: InteractionDecomposition, pinch: dict | None = None, rng=0) -> QmsSpec:
    """QMS on ``Λ_n`` with ``ρ0 ∝ exp(-(H_{W_0} + Ĥ_{W_0}))`` and the induced level maps."""
    levels = [transition_from_hamiltonian(D, j, pinch, rng=rng) for j in range(D.n)]
    return QmsSpec(D.k, D.d, root_state(D), levels, D.max_dim)


def potential_compatibility_residual(spec: QmsSpec, n: int) -> float:
    """``‖Tr_{W_{n+1}} e^{-h_{Λ_{n+1}}} - e^{-h_{Λ_n}}‖`` (max entry)."""
    big = gibbs_density(potential_from_state(density_matrix(spec, n + 1)))
    small = gibbs_density(potential_from_state(density_matrix(spec, n)))
    return float(np.abs(partial_trace(big, tree.ball(spec.k, n)).matrix - small.matrix).max())


__all__ = [
    "InteractionDecomposition", "CommutationError", "potential_from_state", "gibbs_density", "decompose",
    "reassembly_residual", "commutation_residuals", "transition_from_hamiltonian", "qms_from_hamiltonian",
    "potential_compatibility_residual", "site_transition", "root_state",
]
