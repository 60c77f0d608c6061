"""Classical Gibbs measure carried by the central labels of a localized QMS."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace

import numpy as np

from . import tree
from .qms import QmsSpec, density_matrix
from .tree import SiteCoord

EXHAUSTIVE_CAP = 2 ** 20
SAMPLE_SIZE = 10 ** 5


class DomainError(ValueError):
    """Energy undefined because some weight vanishes."""


@dataclass(frozen=True)
class Configuration:
    domain: tuple[SiteCoord, ...]
    labels: tuple[int, ...]

    def __post_init__(self):
        if len(self.domain) != len(self.labels):
            raise ValueError("one label per site required")

    def as_dict(self) -> dict[SiteCoord, int]:
        return dict(zip(self.domain, self.labels))

    def label_string(self) -> str:
        return "".join(str(s) for s in self.labels) if all(s < 10 for s in self.labels) \
            else "-".join(str(s) for s in self.labels)


@dataclass
class GibbsTable:
    """Initial law on the root labels and parent-to-children weight arrays.

    ``weights[j][path]`` has one axis for the parent label followed by one per
    child (lexicographic order).
    """

    k: int
    counts: dict[tuple, int]
    initial: np.ndarray
    weights: list[dict[tuple, np.ndarray]]

    @property
    def q(self) -> int:
        return max(self.counts.values())

    @property
    def depth(self) -> int:
        """Largest ``n`` for which ``μ_{Λ_n}`` is defined."""
        return len(self.weights)

    def weight(self, x: SiteCoord) -> np.ndarray:
        return self.weights[x.level][x.path]

    def count(self, x: SiteCoord) -> int:
        return self.counts[x.path]

    def row_sum_residual(self) -> float:
        worst = abs(float(self.initial.sum()) - 1.0)
        for lev in self.weights:
            for w in lev.values():
                s = w.reshape(w.shape[0], -1).sum(axis=1)
                worst = max(worst, float(np.abs(s - 1).max()))
        return worst

    def min_weight(self) -> float:
        vals = [float(self.initial.min())] + [float(w.min()) for lev in self.weights for w in lev.values()]
        return min(vals)


def weights_from_qms(spec: QmsSpec) -> GibbsTable:
    """``μ_0(ω) = φ(P_ω)`` at the root and ``π_x(ω, ω_S) = φ_ω(1 ⊗ P_{ω_S})``.

    Weights are produced for every level whose children also carry canonical
    data, i.e. ``j = 0 .. n_max - 1``.
    """
    for lev in spec.levels:
        if not lev.is_canonical:
            raise ValueError("weights need canonical per-site data at every level")
    k, d = spec.k, spec.d
    counts = {}
    for lev in spec.levels:
        for e in lev.per_site:
            counts[e.site.path] = len(e.labels)
    root_map = spec.levels[0].per_site[0]
    rho_root = density_matrix(spec, 0).matrix
    initial = np.array([np.real(np.trace(rho_root @ b.projection)) for b in root_map.blocks])
    weights = []
    for j in range(spec.n_max):
        lev, nxt = spec.levels[j], spec.levels[j + 1]
        by_site = {e.site: e for e in nxt.per_site}
        table = {}
        for e in lev.per_site:
            kids = [by_site[c] for c in e.children]
            projs = [[b.projection for b in c.blocks] for c in kids]
            shape = (len(e.labels),) + tuple(len(p) for p in projs)
            w = np.zeros(shape)
            for idx in np.ndindex(*shape[1:]):
                PS = np.ones((1, 1), dtype=complex)
                for c, i in enumerate(idx):
                    PS = np.kron(PS, projs[c][i])
                for om, blk in enumerate(e.blocks):
                    rho = e.states[om]
                    X = np.kron(np.eye(blk.m), PS)
                    w[(om,) + idx] = np.real(np.einsum("ij,ji->", rho, X))
            table[e.site.path] = np.where(np.abs(w) < 1e-15, 0.0, w)
        weights.append(table)
    return GibbsTable(k, counts, initial, weights)


def _log(x: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.clip(x, 0.0, None))


def config_count(table: GibbsTable, n: int) -> int:
    return math.prod(table.count(x) for x in tree.ball(table.k, n))


def _check_depth(table: GibbsTable, n: int) -> None:
    if n < 0 or n > table.depth:
        raise ValueError(f"measure defined for n in 0..{table.depth}, got {n}")


def log_measure_array(table: GibbsTable, n: int) -> tuple[tuple[SiteCoord, ...], np.ndarray]:
    """``log μ_{Λ_n}`` as an array with one axis per site of ``Λ_n`` (canonical order)."""
    _check_depth(table, n)
    sites = tree.ball(table.k, n)
    if config_count(table, n) > EXHAUSTIVE_CAP:
        raise ValueError("configuration space exceeds the exhaustive cap")
    axis = {x: i for i, x in enumerate(sites)}
    shape = tuple(table.count(x) for x in sites)
    out = np.zeros(shape)

    def add(term, axes):
        view = [1] * len(sites)
        for a, s in zip(axes, term.shape):
            view[a] = s
        return term.reshape(view)

    out = out + add(_log(table.initial), [0])
    for j in range(n):
        for x in tree.enumerate_level(table.k, j):
            axes = [axis[x]] + [axis[c] for c in tree.direct_successors(x)]
            out = out + add(_log(table.weight(x)), axes)
    return sites, out


def measure_array(table: GibbsTable, n: int) -> tuple[tuple[SiteCoord, ...], np.ndarray]:
    sites, lm = log_measure_array(table, n)
    return sites, np.exp(lm)


def log_probability(table: GibbsTable, config: Configuration) -> float:
    """Pointwise ``log μ_{Λ_n}(σ)`` for a configuration on a full ball."""
    n = max((x.level for x in config.domain), default=0)
    _check_depth(table, n)
    lab = config.as_dict()
    if set(lab) != set(tree.ball(table.k, n)):
        raise ValueError("configuration must cover a whole ball")
    for x, s in lab.items():
        if not 0 <= s < table.count(x):
            raise ValueError(f"label {s} out of range at {x.label()!r}")
    val = float(_log(table.initial[lab[tree.root(table.k)]]))
    for j in range(n):
        for x in tree.enumerate_level(table.k, j):
            idx = (lab[x],) + tuple(lab[c] for c in tree.direct_successors(x))
            val += float(_log(table.weight(x)[idx]))
    return val


def measure(table: GibbsTable, n: int) -> dict[tuple[int, ...], float]:
    """``μ_{Λ_n}`` as a mapping from label tuples (canonical site order) to probabilities."""
    sites, p = measure_array(table, n)
    return {idx: float(p[idx]) for idx in np.ndindex(*p.shape)}


def sample_configurations(table: GibbsTable, n: int, size: int, seed: int = 0) -> np.ndarray:
    """Uniformly drawn label tuples on ``Λ_n`` (rows, canonical site order)."""
    rng = np.random.default_rng(seed)
    sites = tree.ball(table.k, n)
    cols = [rng.integers(0, table.count(x), size=size) for x in sites]
    return np.stack(cols, axis=1)


def compatibility_check(table: GibbsTable, n: int, seed: int = 0) -> float:
    """``max_σ |Σ_{σ'} μ_{Λ_{n+1}}(σ ∨ σ') - μ_{Λ_n}(σ)|``.

    Exhaustive over ``Λ_{n+1}`` under the cap; otherwise the marginal over the
    new level is factorized per parent and checked on sampled ``σ``.
    """
    _check_depth(table, n + 1)
    if config_count(table, n + 1) <= EXHAUSTIVE_CAP:
        _, big = measure_array(table, n + 1)
        _, small = measure_array(table, n)
        nw = len(tree.enumerate_level(table.k, n + 1))
        marg = big.sum(axis=tuple(range(big.ndim - nw, big.ndim)))
        return float(np.abs(marg - small).max())
    sites = tree.ball(table.k, n)
    W = tree.enumerate_level(table.k, n)
    pos = {x: i for i, x in enumerate(sites)}
    rows = {x: table.weight(x).reshape(table.count(x), -1).sum(axis=1) for x in W}
    worst = 0.0
    for s in sample_configurations(table, n, SAMPLE_SIZE, seed):
        mu = math.exp(log_probability(table, Configuration(sites, tuple(int(v) for v in s))))
        factor = math.prod(float(rows[x][s[pos[x]]]) for x in W)
        worst = max(worst, abs(mu * factor - mu))
    return worst


def classical_hamiltonian(table: GibbsTable, n: int) -> tuple[tuple[SiteCoord, ...], np.ndarray]:
    """Energies ``H(σ) = ln μ_0(σ_root) + Σ ln π`` so that ``μ = exp(H)`` with unit partition sum."""
    _check_depth(table, n)
    used = [table.initial] + [table.weight(x) for j in range(n) for x in tree.enumerate_level(table.k, j)]
    if min(float(w.min()) for w in used) <= 0.0:
        raise DomainError("a transition weight vanishes; the energy is undefined")
    return log_measure_array(table, n)


def partition_sum(table: GibbsTable, n: int) -> float:
    _, H = classical_hamiltonian(table, n)
    return float(np.exp(H).sum())


def scale_weight(table: GibbsTable, site: SiteCoord, row: int, factor: float) -> GibbsTable:
    """Copy of ``table`` with one parent-label row of ``π_x`` multiplied by ``factor``."""
    weights = [dict(lev) for lev in table.weights]
    if site.level >= len(weights) or site.path not in weights[site.level]:
        raise ValueError(f"no weights at site {site.label()!r}")
    w = weights[site.level][site.path].copy()
    if not 0 <= row < w.shape[0]:
        raise ValueError(f"row {row} out of range")
    w[row] = w[row] * factor
    weights[site.level][site.path] = w
    return replace(table, weights=weights)


def export_csv(table: GibbsTable, n: int, target=None) -> str:
    """CSV with columns configuration, probability, energy (energy blank if undefined)."""
    sites, lm = log_measure_array(table, n)
    try:
        _, H = classical_hamiltonian(table, n)
    except DomainError:
        H = None
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["configuration", "probability", "energy"])
    for idx in np.ndindex(*lm.shape):
        conf = Configuration(sites, tuple(int(i) for i in idx)).label_string()
        prob = np.format_float_positional(float(np.exp(lm[idx])), precision=17, unique=False, fractional=False)
        energy = "" if H is None else np.format_float_positional(float(H[idx]), precision=17, unique=False, fractional=False)
        w.writerow([conf, prob, energy])
    text = buf.getvalue()
    if target is not None:
        with open(target, "w") as fh:
            fh.write(text)
    return text


def quantum_label_probabilities(spec: QmsSpec, n: int) -> np.ndarray:
    """``φ(⊗_{x∈Λ_n} P_{σ(x)})`` for every configuration, from the density of ``φ|Λ_n``."""
    rho = density_matrix(spec, n).matrix
    sites = tree.ball(spec.k, n)
    maps = {e.site: e for lev in spec.levels for e in lev.per_site}
    projs = [[b.projection for b in maps[x].blocks] for x in sites]
    shape = tuple(len(p) for p in projs)
    out = np.zeros(shape)
    for idx in np.ndindex(*shape):
        P = np.ones((1, 1), dtype=complex)
        for s, i in zip(projs, idx):
            P = np.kron(P, s[i])
        out[idx] = np.real(np.einsum("ij,ji->", rho, P))
    return out


__all__ = [
    "Configuration", "GibbsTable", "DomainError", "weights_from_qms", "measure", "measure_array",
    "log_measure_array", "log_probability", "compatibility_check", "classical_hamiltonian",
    "partition_sum", "scale_weight", "export_csv", "quantum_label_probabilities",
]
