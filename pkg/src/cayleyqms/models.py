"""Example generators: a random localized QMS and a diagonal Ising model with competing interactions."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import tree
from .algebra import LabeledOperator, random_density, random_unitary
from .hamiltonian import InteractionDecomposition, qms_from_hamiltonian
from .qms import QmsSpec
from .reconstruction import ClassicalData, FactorStates, reconstruct
from .transition import DEFAULT_MAX_DIM


def default_dims(d: int, q: int) -> list[tuple[int, int]]:
    """A standard block split of ``C^d`` into ``q`` labels."""
    if q == 1:
        return [(d, 1)]
    if d == 2 and q == 2:
        return [(1, 1), (1, 1)]
    if d == 4 and q == 2:
        return [(1, 2), (2, 1)]
    if d % q == 0:
        return [(d // q, 1)] * q
    raise ValueError(f"no default block split for d={d}, q={q}; pass dims explicitly")


def _random_weights(rng: np.random.Generator, shape: tuple[int, ...], floor: float = 0.05) -> np.ndarray:
    w = rng.random(shape) + floor
    flat = w.reshape(shape[0], -1)
    return (flat / flat.sum(axis=1, keepdims=True)).reshape(shape)


def random_classical_data(seed: int, k: int, d: int, q: int, depth: int,
                          dims: list[tuple[int, int]] | None = None,
                          scramble: bool = True) -> tuple[ClassicalData, FactorStates]:
    """Seeded random weights, frames and faithful factor states on levels ``0..depth``."""
    dims = default_dims(d, q) if dims is None else [tuple(b) for b in dims]
    if len(dims) != q:
        raise ValueError(f"expected {q} block dims, got {len(dims)}")
    if sum(n * m for n, m in dims) != d:
        raise ValueError(f"block dims {dims} do not partition dimension {d}")
    rng = np.random.default_rng(seed)
    sites = tree.ball(k, depth)
    frames = {x.path: (random_unitary(rng, d) if scramble else np.eye(d, dtype=complex)) for x in sites}
    dmap = {x.path: list(dims) for x in sites}
    pi0 = _random_weights(rng, (1, q))[0]
    pis, etas = [], []
    for j in range(depth):
        wl, el = {}, {}
        for x in tree.enumerate_level(k, j):
            wl[x.path] = _random_weights(rng, (q,) * (k + 1))
            states = {}
            for w in range(q):
                for sig in itertools.product(range(q), repeat=k):
                    size = dims[w][1] * math.prod(dims[s][0] for s in sig)
                    states[(w, sig)] = random_density(rng, size)
            el[x.path] = states
        pis.append(wl)
        etas.append(el)
    eta0 = [random_density(rng, n) for n, _ in dims]
    hat = {y.path: [random_density(rng, m) for _, m in dims] for y in tree.enumerate_level(k, depth)}
    data = ClassicalData(k, d, depth, dmap, pi0, pis, frames)
    return data, FactorStates(eta0, etas, hat)


def random_localized_qms(seed: int, k: int, d: int, q: int, n: int,
                         dims: list[tuple[int, int]] | None = None,
                         max_dim: int = DEFAULT_MAX_DIM) -> QmsSpec:
    """A faithful localized QMS with canonical levels ``0..n`` (state on ``Λ_{n+1}``).

    Built from random classical data so that the Markov identities hold by
    construction and ``ρ0`` is invariant.
    """
    data, fs = random_classical_data(seed, k, d, q, n + 1, dims)
    return reconstruct(data, fs, max_dim)


# --------------------------------------------------------------------------
# Ising model with competing interactions

SIGMA_Z = np.diag([1.0, -1.0]).astype(complex)
SPINS = np.array([1.0, -1.0])


@dataclass(frozen=True)
class IsingParams:
    beta: float
    J: float
    Jp: float
    k: int

    def __post_init__(self):
        for v in (self.beta, self.J, self.Jp):
            if not math.isfinite(v):
                raise ValueError("parameters must be finite")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.k < 1:
            raise ValueError("k must be >= 1")


def bond_energies(p: IsingParams) -> np.ndarray:
    """``H_{x,S(x)}(s_x, s_S)`` over spin configurations, shape ``(2,)*(k+1)``."""
    out = np.zeros((2,) * (p.k + 1))
    for idx in np.ndindex(*out.shape):
        s = SPINS[list(idx)]
        nn = sum(s[0] * s[i] for i in range(1, p.k + 1))
        nnn = sum(s[u] * s[v] for u in range(1, p.k + 1) for v in range(u + 1, p.k + 1))
        out[idx] = -p.beta * (p.J * nn + p.Jp * nnn)
    return out


def boundary_law(p: IsingParams, n: int) -> list[np.ndarray]:
    """``f_j(s) = Σ_{s_S} e^{-H(s, s_S)} ∏ f_{j+1}(s_y)`` for ``j = 0..n``, scaled so ``Σ f_0 = 1``."""
    H = bond_energies(p)
    boltz = np.exp(-H)
    f = [None] * (n + 1)
    f[n] = np.ones(2)
    for j in range(n - 1, -1, -1):
        g = boltz
        for _ in range(p.k):
            g = g @ f[j + 1]
        f[j] = g
    c = f[0].sum() ** (-1.0 / p.k ** n)
    for j in range(n + 1):
        f[j] = f[j] * c ** (p.k ** (n - j))
    return f


def ising_decomposition(p: IsingParams, n: int) -> InteractionDecomposition:
    """Diagonal root, bond and boundary terms on ``Λ_n``; all constants sit in the boundary terms."""
    k = p.k
    H = bond_energies(p).reshape(-1)
    f = boundary_law(p, n)
    bonds = {}
    for x in tree.ball(k, n - 1) if n > 0 else ():
        support = (x,) + tree.direct_successors(x)
        bonds[x.path] = LabeledOperator(support, (2,) * len(support), np.diag(H).astype(complex))
    hats = {x.path: LabeledOperator((x,), (2,), np.diag(-np.log(f[x.level])).astype(complex))
            for x in tree.ball(k, n)}
    root = LabeledOperator((tree.root(k),), (2,), np.zeros((2, 2), dtype=complex))
    return InteractionDecomposition(k, 2, n, root, bonds, hats)


def ising_competing_model(p: IsingParams, n: int, pinch: bool = True) -> tuple[QmsSpec, InteractionDecomposition]:
    """QMS on ``Λ_{n+1}`` induced by the diagonal Ising terms (levels ``0..n``).

    With ``pinch`` the site maps are compressed onto the diagonal algebra, which
    makes them conditional expectations in canonical form without changing the state.
    """
    D = ising_decomposition(p, n + 1)
    proj = [np.diag([1.0, 0.0]).astype(complex), np.diag([0.0, 1.0]).astype(complex)]
    pinches = {x.path: proj for x in tree.ball(p.k, n)} if pinch else None
    return qms_from_hamiltonian(D, pinches), D


def classical_ising_weights(p: IsingParams, n: int) -> tuple[tuple, np.ndarray]:
    """Free-boundary Gibbs weights ``∝ exp(-Σ_{x∈Λ_{n-1}} H_{x,S(x)})`` on ``Λ_n`` (normalized)."""
    sites = tree.ball(p.k, n)
    H = bond_energies(p)
    pos = {x: i for i, x in enumerate(sites)}
    logw = np.zeros((2,) * len(sites))
    for x in tree.ball(p.k, n - 1) if n > 0 else ():
        axes = [pos[x]] + [pos[c] for c in tree.direct_successors(x)]
        view = [1] * len(sites)
        for a in axes:
            view[a] = 2
        logw = logw + (-H).reshape(view)
    w = np.exp(logw - logw.max())
    return sites, w / w.sum()
