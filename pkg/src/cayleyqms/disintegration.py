"""Decomposition of a localized QMS into product components over the label measure.

For a label configuration ``σ`` on ``Λ_n`` each site ``x`` is compressed to the
block ``H_{σ(x)} = H_{σ(x),0} ⊗ H_{σ(x),1}`` (factor order ``0`` then ``1``).
The component state ``ψ_σ`` is a product of

* ``η0`` on ``H_{σ(root),0}``,
* ``η_x`` on ``H_{σ(x),1} ⊗ (⊗_{y∈S(x)} H_{σ(y),0})`` for ``x`` in ``Λ_{n-1}``,
* ``η̂_y`` on ``H_{σ(y),1}`` for ``y`` in ``W_n``,

and ``φ(a) = Σ_σ μ(σ) ψ_σ(E_σ(a))`` for ``a`` in ``B_{Λ_n}``.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import tree
from .algebra import (
    LabeledOperator,
    LocalMap,
    UmegakiMap,
    _reorder,
    apply_local_maps,
    decomposition_from_isometries,
    dual_superoperator,
    embed,
    partial_trace,
)
from .gibbs import Configuration, GibbsTable, measure_array, weights_from_qms
from .qms import QmsSpec, density_matrix
from .transition import SiteTransitionExpectation
from .tree import SiteCoord

TAU_FAITHFUL = 1e-12


class NonFaithfulError(ValueError):
    """A normalizing weight vanishes along the configuration."""


def site_maps(spec: QmsSpec) -> dict[SiteCoord, SiteTransitionExpectation]:
    out = {}
    for lev in spec.levels:
        if not lev.is_canonical:
            raise ValueError("disintegration needs canonical per-site data")
        for e in lev.per_site:
            out[e.site] = e
    return out


def _configuration_levels(sigma: Configuration) -> int:
    n = max((x.level for x in sigma.domain), default=0)
    k = sigma.domain[0].k
    if set(sigma.domain) != set(tree.ball(k, n)):
        raise ValueError("configuration must cover a whole ball")
    return n


def _kron_all(mats) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for m in mats:
        out = np.kron(out, m)
    return out


def compression(spec: QmsSpec, sigma: Configuration, a: LabeledOperator) -> LabeledOperator:
    """``(⊗_x V_{σ(x)})* a (⊗_x V_{σ(x)})`` over the sites of ``σ``, in block coordinates."""
    maps = site_maps(spec)
    lab = sigma.as_dict()
    bad = set(a.support) - set(lab)
    if bad:
        raise ValueError("operator support outside the configuration domain")
    sites = tree.sort_sites(lab)
    full = embed(a, sites, (spec.d,) * len(sites))
    blocks = [maps[x].block(lab[x]) for x in sites]
    V = _kron_all([b.isometry for b in blocks])
    return LabeledOperator(sites, tuple(b.rank for b in blocks), V.conj().T @ full.matrix @ V)


@dataclass
class ComponentState:
    sigma: Configuration
    n: int
    dims: dict[SiteCoord, tuple[int, int]]
    eta0: np.ndarray
    eta: dict[SiteCoord, np.ndarray]
    eta_hat: dict[SiteCoord, np.ndarray]
    _density: LabeledOperator | None = field(default=None, repr=False)

    @property
    def sites(self) -> tuple[SiteCoord, ...]:
        return tree.sort_sites(self.dims)

    def factors(self) -> list[tuple[str, SiteCoord, np.ndarray]]:
        out = [("eta0", self.sites[0], self.eta0)]
        out += [("eta", x, self.eta[x]) for x in tree.sort_sites(self.eta)]
        out += [("eta_hat", y, self.eta_hat[y]) for y in tree.sort_sites(self.eta_hat)]
        return out

    def density(self) -> LabeledOperator:
        """``ψ_σ`` as a density on ``⊗_x H_{σ(x)}`` (canonical site order)."""
        if self._density is not None:
            return self._density
        k = self.sites[0].k
        slots, mats = [(self.sites[0], 0)], [self.eta0]
        for x in tree.sort_sites(self.eta):
            slots.append((x, 1))
            slots += [(c, 0) for c in tree.direct_successors(x)]
            mats.append(self.eta[x])
        for y in tree.sort_sites(self.eta_hat):
            slots.append((y, 1))
            mats.append(self.eta_hat[y])
        slot_dims = [self.dims[s][i] for s, i in slots]
        target = [(x, i) for x in tree.ball(k, self.n) for i in (0, 1)]
        perm = [slots.index(t) for t in target]
        rho = _reorder(_kron_all(mats), slot_dims, perm)
        self._density = LabeledOperator(self.sites, tuple(self.dims[x][0] * self.dims[x][1] for x in self.sites), rho)
        return self._density

    def evaluate(self, compressed: LabeledOperator) -> complex:
        rho = self.density()
        a = embed(compressed, rho.support, rho.dims)
        return complex(np.einsum("ij,ji->", rho.matrix, a.matrix))


def _partial_trace_slots(rho: np.ndarray, dims: list[int], keep: list[int]) -> np.ndarray:
    L = len(dims)
    gone = [i for i in range(L) if i not in keep]
    t = _reorder(rho, dims, keep + gone)
    K = math.prod(dims[i] for i in keep)
    G = math.prod(dims[i] for i in gone)
    return np.einsum("ijkj->ik", t.reshape(K, G, K, G))


def _eta_site(e: SiteTransitionExpectation, label: int, child_blocks) -> tuple[np.ndarray, float]:
    """Unnormalized ``η_x`` and its weight ``π``."""
    blk = e.block(label)
    W = np.kron(np.eye(blk.m), _kron_all([b.isometry for b in child_blocks]))
    c = W.conj().T @ e.states[label] @ W
    dims = [blk.m] + [x for b in child_blocks for x in (b.n, b.m)]
    keep = [0] + [1 + 2 * i for i in range(len(child_blocks))]
    eta = _partial_trace_slots(c, dims, keep)
    return eta, float(np.real(np.trace(eta)))


def _boundary_eta(e: SiteTransitionExpectation, label: int) -> np.ndarray:
    blk = e.block(label)
    D = e.d ** e.k
    return np.einsum("iaja->ij", e.states[label].reshape(blk.m, D, blk.m, D))


def component_state(spec: QmsSpec, sigma: Configuration) -> ComponentState:
    n = _configuration_levels(sigma)
    if n > spec.n_max:
        raise ValueError(f"components defined up to n={spec.n_max}")
    maps = site_maps(spec)
    lab = sigma.as_dict()
    blocks = {x: maps[x].block(lab[x]) for x in lab}
    dims = {x: (b.n, b.m) for x, b in blocks.items()}
    r = tree.root(spec.k)
    rho0 = density_matrix(spec, 0).matrix
    B = blocks[r]
    c = (B.isometry.conj().T @ rho0 @ B.isometry).reshape(B.n, B.m, B.n, B.m)
    eta0 = np.einsum("iaja->ij", c)
    w0 = float(np.real(np.trace(eta0)))
    if w0 <= TAU_FAITHFUL:
        raise NonFaithfulError("root label has zero probability")
    eta = {}
    for x in tree.ball(spec.k, n - 1) if n > 0 else ():
        kids = [blocks[y] for y in tree.direct_successors(x)]
        raw, w = _eta_site(maps[x], lab[x], kids)
        if w <= TAU_FAITHFUL:
            raise NonFaithfulError(f"zero weight at site {x.label()!r}")
        eta[x] = raw / w
    eta_hat = {y: _boundary_eta(maps[y], lab[y]) for y in tree.enumerate_level(spec.k, n)}
    return ComponentState(sigma, n, dims, eta0 / w0, eta, eta_hat)


def embedded_component_density(spec: QmsSpec, psi: ComponentState) -> np.ndarray:
    """Density of ``a -> ψ_σ(E_σ(a))`` on ``B_{Λ_n}``."""
    maps = site_maps(spec)
    lab = psi.sigma.as_dict()
    V = _kron_all([maps[x].block(lab[x]).isometry for x in psi.sites])
    return V @ psi.density().matrix @ V.conj().T


def configurations(spec: QmsSpec, n: int):
    maps = site_maps(spec)
    sites = tree.ball(spec.k, n)
    for labels in itertools.product(*[maps[x].labels for x in sites]):
        yield Configuration(sites, tuple(labels))


def disintegration_terms(spec: QmsSpec, n: int, table: GibbsTable | None = None):
    table = weights_from_qms(spec) if table is None else table
    _, mu = measure_array(table, n)
    for sigma in configurations(spec, n):
        yield sigma, float(mu[sigma.labels])


def disintegration_check(spec: QmsSpec, n: int) -> float:
    """Max entry of ``ρ_{Λ_n} - Σ_σ μ(σ) ρ_σ`` (the max over matrix-unit observables)."""
    spec.guard(n)
    rho = density_matrix(spec, n).matrix
    acc = np.zeros_like(rho)
    for sigma, w in disintegration_terms(spec, n):
        if w <= 0:
            continue
        acc += w * embedded_component_density(spec, component_state(spec, sigma))
    return float(np.abs(rho - acc).max())


# --------------------------------------------------------------------------
# component transitions

@dataclass
class ComponentLevel:
    """``⊗_{x∈W_j} E_{σ(x)}`` on the compressed algebras of ``σ``."""

    j: int
    maps: list[LocalMap]
    dims: dict[SiteCoord, int]

    def __call__(self, a: LabeledOperator) -> LabeledOperator:
        k = self.maps[0].inputs[0].k
        target = tree.ball(k, self.j + 1)
        full = embed(a, target, [self.dims[x] for x in target])
        return apply_local_maps(full, self.maps)


def _restricted(psi: ComponentState, y: SiteCoord) -> np.ndarray:
    """State of ``ψ_σ`` on ``H_{σ(y),1}``."""
    if y in psi.eta_hat:
        return psi.eta_hat[y]
    m = psi.dims[y][1]
    kids = [psi.dims[c][0] for c in tree.direct_successors(y)]
    return _partial_trace_slots(psi.eta[y], [m] + kids, [0])


def component_transition(spec: QmsSpec, sigma: Configuration, j: int,
                         psi: ComponentState | None = None) -> ComponentLevel:
    psi = component_state(spec, sigma) if psi is None else psi
    if not 0 <= j < psi.n:
        raise ValueError(f"component transitions exist for j in 0..{psi.n - 1}")
    maps = []
    for x in tree.enumerate_level(spec.k, j):
        n, m = psi.dims[x]
        kids = tree.direct_successors(x)
        zetas = [_restricted(psi, y) for y in kids]
        slot_dims = [m] + [psi.dims[y][0] for y in kids] + [psi.dims[y][1] for y in kids]
        K = len(kids)
        perm = [0] + [p for i in range(K) for p in (1 + i, 1 + K + i)]
        state = _reorder(_kron_all([psi.eta[x]] + zetas), slot_dims, perm)
        ext = math.prod(psi.dims[y][0] * psi.dims[y][1] for y in kids)
        dec = decomposition_from_isometries([np.eye(n * m)], [(n, m)])
        S = UmegakiMap(dec, [state], ext).superoperator()
        maps.append(LocalMap((x,) + kids, (x,), (n * m,), S))
    dims = {x: a * b for x, (a, b) in psi.dims.items()}
    return ComponentLevel(j, maps, dims)


def component_markov_residual(spec: QmsSpec, sigma: Configuration, j: int) -> float:
    """Max entry of ``E_j†(ψ|Λ_j) - ψ|Λ_{j+1}`` for the component quasi-conditional expectation."""
    psi = component_state(spec, sigma)
    lev = component_transition(spec, sigma, j, psi)
    rho = psi.density()
    lower = partial_trace(rho, tree.ball(spec.k, j))
    upper = partial_trace(rho, tree.ball(spec.k, j + 1))
    duals = []
    for lm in lev.maps:
        x = lm.inputs[0]
        duals.append(LocalMap((x,), lm.inputs, tuple(lev.dims[s] for s in lm.inputs),
                              dual_superoperator(lm.superop)))
    pulled = apply_local_maps(lower, duals)
    return float(np.abs(pulled.matrix - upper.matrix).max())


def component_report(spec: QmsSpec, n: int) -> str:
    """JSON list of configurations with their weight and per-site block dims."""
    rows = []
    for sigma, w in disintegration_terms(spec, n):
        maps = site_maps(spec)
        rows.append({
            "configuration": list(sigma.labels),
            "weight": w,
            "dims": {x.label(): list(maps[x].block(s).dims) for x, s in zip(sigma.domain, sigma.labels)},
        })
    return json.dumps(rows, indent=2)
