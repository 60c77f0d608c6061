"""Build a localized QMS from a Markov label measure and block factor states.

Data cover levels ``0..L``: block dims and frames at every level, transition
weights ``π^j`` and factor states ``η^j`` for ``j < L``, and boundary states
``η̂`` at level ``L``. The resulting ``QmsSpec`` has levels ``0..L-1`` and its
state lives on ``Λ_L``.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import tree
from .algebra import (
    _reorder,
    decomposition_from_isometries,
    validate_density,
)
from .disintegration import (
    ComponentState,
    _boundary_eta,
    _eta_site,
    _kron_all,
    _partial_trace_slots,
    component_state,
    site_maps,
)
from .gibbs import Configuration
from .qms import QmsSpec, density_matrix, markov_residual
from .transition import DEFAULT_MAX_DIM, LevelTransitionExpectation, site_expectation
from .tree import SiteCoord

TAU_NORMALIZATION = 1e-10


class NormalizationError(ValueError):
    """Initial law or a transition row does not sum to one."""


@dataclass
class ClassicalData:
    k: int
    d: int
    depth: int
    dims: dict[tuple, list[tuple[int, int]]]
    pi0: np.ndarray
    pi: list[dict[tuple, np.ndarray]]
    frames: dict[tuple, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.pi0 = np.asarray(self.pi0, dtype=float)
        self.pi = [{tuple(p): np.asarray(w, dtype=float) for p, w in lev.items()} for lev in self.pi]
        self.dims = {tuple(p): [tuple(int(v) for v in b) for b in bl] for p, bl in self.dims.items()}
        for x in tree.ball(self.k, self.depth):
            if x.path not in self.dims:
                raise ValueError(f"missing block dims at {x.label()!r}")
            if sum(n * m for n, m in self.dims[x.path]) != self.d:
                raise ValueError(f"block dims at {x.label()!r} do not fill dimension {self.d}")
            if x.path not in self.frames:
                self.frames[x.path] = np.eye(self.d, dtype=complex)
        if len(self.pi) != self.depth:
            raise ValueError("one weight table per level below the boundary required")
        if self.pi0.shape != (self.count(tree.root(self.k)),):
            raise ValueError("initial law has the wrong number of labels")
        for j, lev in enumerate(self.pi):
            for x in tree.enumerate_level(self.k, j):
                shape = (self.count(x),) + tuple(self.count(c) for c in tree.direct_successors(x))
                if lev.get(x.path) is None or lev[x.path].shape != shape:
                    raise ValueError(f"weights at {x.label()!r} must have shape {shape}")

    def count(self, x: SiteCoord) -> int:
        return len(self.dims[x.path])

    def block_dims(self, x: SiteCoord, label: int) -> tuple[int, int]:
        return self.dims[x.path][label]

    def isometry(self, x: SiteCoord, label: int) -> np.ndarray:
        off = sum(n * m for n, m in self.dims[x.path][:label])
        n, m = self.dims[x.path][label]
        return self.frames[x.path][:, off: off + n * m]

    def weight(self, x: SiteCoord) -> np.ndarray:
        return self.pi[x.level][x.path]

    def normalization_residual(self) -> float:
        worst = abs(float(self.pi0.sum()) - 1.0)
        worst = max(worst, float(max(0.0, -self.pi0.min())))
        for lev in self.pi:
            for w in lev.values():
                rows = w.reshape(w.shape[0], -1).sum(axis=1)
                worst = max(worst, float(np.abs(rows - 1).max()), float(max(0.0, -w.min())))
        return worst

    def check_normalization(self) -> None:
        r = self.normalization_residual()
        if r > TAU_NORMALIZATION:
            raise NormalizationError(f"weights are not normalized (defect {r:.3e})")


@dataclass
class FactorStates:
    """``eta0[ω]`` on ``N_ω``; ``eta[j][path][(ω, σ_S)]`` on ``N̄_ω ⊗ (⊗_y N_{σ_y})``; ``eta_hat[path][ω]`` on ``N̄_ω`` at the boundary level."""

    eta0: list[np.ndarray]
    eta: list[dict[tuple, dict[tuple, np.ndarray]]]
    eta_hat: dict[tuple, list[np.ndarray]]

    def validate(self, data: ClassicalData) -> None:
        r = tree.root(data.k)
        for w, e in enumerate(self.eta0):
            n, _ = data.block_dims(r, w)
            if e.shape != (n, n):
                raise ValueError("eta0 has the wrong dimension")
            validate_density(e, "eta0")
        for j in range(data.depth):
            for x in tree.enumerate_level(data.k, j):
                kids = tree.direct_successors(x)
                for w in range(data.count(x)):
                    for sig in itertools.product(*[range(data.count(c)) for c in kids]):
                        size = data.block_dims(x, w)[1] * math.prod(data.block_dims(c, s)[0] for c, s in zip(kids, sig))
                        e = self.eta[j][x.path][(w, sig)]
                        if e.shape != (size, size):
                            raise ValueError(f"eta at {x.label()!r} has the wrong dimension")
                        validate_density(e, f"eta at {x.label()!r}")
        for y in tree.enumerate_level(data.k, data.depth):
            for w in range(data.count(y)):
                m = data.block_dims(y, w)[1]
                if self.eta_hat[y.path][w].shape != (m, m):
                    raise ValueError("boundary state has the wrong dimension")
                validate_density(self.eta_hat[y.path][w], "boundary state")


def markov_measure(data: ClassicalData, n: int) -> tuple[tuple[SiteCoord, ...], np.ndarray]:
    """``μ(σ) = π0(σ_root) ∏_{j<n} ∏_{x∈W_j} π^j_x(σ_x, σ_{S(x)})`` as an array over ``Λ_n``."""
    data.check_normalization()
    if not 0 <= n <= data.depth:
        raise ValueError(f"n must lie in 0..{data.depth}")
    sites = tree.ball(data.k, n)
    axis = {x: i for i, x in enumerate(sites)}
    letters = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
    if len(sites) > len(letters):
        raise ValueError("volume too large for exhaustive tables")
    terms, specs = [data.pi0], [letters[0]]
    for j in range(n):
        for x in tree.enumerate_level(data.k, j):
            terms.append(data.weight(x))
            specs.append("".join(letters[axis[y]] for y in (x,) + tree.direct_successors(x)))
    out = letters[: len(sites)]
    return sites, np.einsum(",".join(specs) + "->" + out, *terms)


def boundary_state(data: ClassicalData, fs: FactorStates, y: SiteCoord, label: int) -> np.ndarray:
    """``Σ_σ π_y(label, σ) η_y(label, σ)(· ⊗ 1)``, or the supplied boundary state at depth ``L``."""
    if y.level == data.depth:
        return fs.eta_hat[y.path][label]
    kids = tree.direct_successors(y)
    m = data.block_dims(y, label)[1]
    out = np.zeros((m, m), dtype=complex)
    w = data.weight(y)
    for sig in itertools.product(*[range(data.count(c)) for c in kids]):
        p = w[(label,) + sig]
        if p == 0:
            continue
        dims = [m] + [data.block_dims(c, s)[0] for c, s in zip(kids, sig)]
        out += p * _partial_trace_slots(fs.eta[y.level][y.path][(label, sig)], dims, [0])
    return out


def derive_transition_states(data: ClassicalData, fs: FactorStates, j: int) -> list:
    """Canonical site maps of level ``j`` whose block states realize the factor data.

    ``φ_ω`` has density ``Σ_σ π(ω, σ) (1 ⊗ V_σ)(η(ω, σ) ⊗ ⊗_y η̂_y(σ_y))(1 ⊗ V_σ)*`` with
    factor slots reordered to ``(N̄_ω, N_{σ_1}, N̄_{σ_1}, N_{σ_2}, ...)``.
    """
    if not 0 <= j < data.depth:
        raise ValueError(f"j must lie in 0..{data.depth - 1}")
    D = data.d ** data.k
    out = []
    for x in tree.enumerate_level(data.k, j):
        kids = tree.direct_successors(x)
        K = len(kids)
        states, isos = [], []
        for w in range(data.count(x)):
            m = data.block_dims(x, w)[1]
            rho = np.zeros((m * D, m * D), dtype=complex)
            for sig in itertools.product(*[range(data.count(c)) for c in kids]):
                p = data.weight(x)[(w,) + sig]
                if p == 0:
                    continue
                cd = [data.block_dims(c, s) for c, s in zip(kids, sig)]
                zetas = [boundary_state(data, fs, c, s) for c, s in zip(kids, sig)]
                local = _kron_all([fs.eta[j][x.path][(w, sig)]] + zetas)
                slot_dims = [m] + [a for a, _ in cd] + [b for _, b in cd]
                perm = [0] + [q for i in range(K) for q in (1 + i, 1 + K + i)]
                local = _reorder(local, slot_dims, perm)
                W = np.kron(np.eye(m), _kron_all([data.isometry(c, s) for c, s in zip(kids, sig)]))
                rho += p * (W @ local @ W.conj().T)
            states.append((rho + rho.conj().T) / 2)
            isos.append(data.isometry(x, w))
        dec = decomposition_from_isometries(isos, data.dims[x.path])
        out.append(site_expectation(x, data.d, dec, states, j))
    return out


def initial_state(data: ClassicalData, fs: FactorStates) -> np.ndarray:
    r = tree.root(data.k)
    rho = np.zeros((data.d, data.d), dtype=complex)
    for w in range(data.count(r)):
        V = data.isometry(r, w)
        rho += data.pi0[w] * (V @ np.kron(fs.eta0[w], boundary_state(data, fs, r, w)) @ V.conj().T)
    return (rho + rho.conj().T) / 2


def reconstruct(data: ClassicalData, fs: FactorStates, max_dim: int = DEFAULT_MAX_DIM) -> QmsSpec:
    data.check_normalization()
    fs.validate(data)
    levels = [LevelTransitionExpectation(j, derive_transition_states(data, fs, j), max_dim)
              for j in range(data.depth)]
    return QmsSpec(data.k, data.d, initial_state(data, fs), levels, max_dim)


def component_from_data(data: ClassicalData, fs: FactorStates, sigma: Configuration) -> ComponentState:
    lab = sigma.as_dict()
    n = max(x.level for x in lab)
    dims = {x: data.block_dims(x, s) for x, s in lab.items()}
    eta = {x: fs.eta[x.level][x.path][(lab[x], tuple(lab[c] for c in tree.direct_successors(x)))]
           for x in tree.ball(data.k, n - 1)} if n > 0 else {}
    hat = {y: boundary_state(data, fs, y, lab[y]) for y in tree.enumerate_level(data.k, n)}
    return ComponentState(sigma, n, dims, fs.eta0[lab[tree.root(data.k)]], eta, hat)


def assemble_state(data: ClassicalData, fs: FactorStates, n: int) -> np.ndarray:
    """Density of ``Σ_σ μ(σ) ψ_σ ∘ E_σ`` on ``Λ_n``."""
    sites, mu = markov_measure(data, n)
    size = data.d ** len(sites)
    if size > DEFAULT_MAX_DIM:
        raise ValueError(f"dimension {size} exceeds cap {DEFAULT_MAX_DIM}")
    rho = np.zeros((size, size), dtype=complex)
    for idx in np.ndindex(*mu.shape):
        if mu[idx] == 0:
            continue
        sigma = Configuration(sites, tuple(int(i) for i in idx))
        psi = component_from_data(data, fs, sigma)
        V = _kron_all([data.isometry(x, s) for x, s in zip(sites, idx)])
        rho += mu[idx] * (V @ psi.density().matrix @ V.conj().T)
    return (rho + rho.conj().T) / 2


def transition_identity_residual(data: ClassicalData, fs: FactorStates, j: int, seed: int = 0, trials: int = 5) -> float:
    """Compare ``φ_ω(ā ⊗ V_σ(b ⊗ b̄)V_σ*)`` against ``π η(ā ⊗ b) ∏_y ζ_y(b̄_y)`` on random entries."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for e in derive_transition_states(data, fs, j):
        x = e.site
        kids = tree.direct_successors(x)
        for w in e.labels:
            m = e.block(w).m
            for sig in itertools.product(*[range(data.count(c)) for c in kids]):
                cd = [data.block_dims(c, s) for c, s in zip(kids, sig)]
                nb = math.prod(a for a, _ in cd)
                for _ in range(trials):
                    abar = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
                    b = rng.standard_normal((nb, nb)) + 1j * rng.standard_normal((nb, nb))
                    bbar = [rng.standard_normal((mm, mm)) + 1j * rng.standard_normal((mm, mm)) for _, mm in cd]
                    inner = _reorder(np.kron(b, _kron_all(bbar)), [a for a, _ in cd] + [mm for _, mm in cd],
                                     [q for i in range(len(cd)) for q in (i, len(cd) + i)])
                    Vs = _kron_all([data.isometry(c, s) for c, s in zip(kids, sig)])
                    X = np.kron(abar, Vs @ inner @ Vs.conj().T)
                    lhs = np.einsum("ij,ji->", e.states[w], X)
                    eta = fs.eta[j][x.path][(w, sig)]
                    rhs = data.weight(x)[(w,) + sig] * np.einsum("ij,ji->", eta, np.kron(abar, b))
                    for (c, s), bb in zip(zip(kids, sig), bbar):
                        rhs *= np.einsum("ij,ji->", boundary_state(data, fs, c, s), bb)
                    worst = max(worst, abs(lhs - rhs))
    return float(worst)


@dataclass
class ReconstructionReport:
    precheck_ok: bool
    precheck_residual: float
    markov_residuals: list[float]
    density_residual: float

    @property
    def max_residual(self) -> float:
        return max([self.density_residual] + self.markov_residuals)


def verify_reconstruction(data: ClassicalData, fs: FactorStates, n: int) -> ReconstructionReport:
    pre = data.normalization_residual()
    if pre > TAU_NORMALIZATION:
        return ReconstructionReport(False, pre, [], math.inf)
    spec = reconstruct(data, fs)
    markov = [markov_residual(spec, j) for j in range(min(n, spec.depth))]
    dens = float(np.abs(assemble_state(data, fs, n) - density_matrix(spec, n).matrix).max())
    return ReconstructionReport(True, pre, markov, dens)


def extract_classical_data(spec: QmsSpec, n: int) -> tuple[ClassicalData, FactorStates]:
    """Read ``(π, η)`` off a canonical QMS for levels ``0..n`` with boundary states at ``n``."""
    if not 0 <= n <= spec.n_max:
        raise ValueError(f"n must lie in 0..{spec.n_max}")
    maps = site_maps(spec)
    dims, frames = {}, {}
    for x in tree.ball(spec.k, n):
        e = maps[x]
        dims[x.path] = [b.dims for b in e.blocks]
        frames[x.path] = np.concatenate([b.isometry for b in e.blocks], axis=1)
    r = tree.root(spec.k)
    eta0, pi0 = [], []
    for w in maps[r].labels:
        psi = component_state(spec, Configuration((r,), (w,)))
        eta0.append(psi.eta0)
        pi0.append(float(np.real(np.trace(maps[r].block(w).projection @ density_matrix(spec, 0).matrix))))
    pi, eta = [], []
    for j in range(n):
        wl, el = {}, {}
        for x in tree.enumerate_level(spec.k, j):
            e = maps[x]
            kids = tree.direct_successors(x)
            shape = (len(e.labels),) + tuple(len(maps[c].labels) for c in kids)
            w = np.zeros(shape)
            states = {}
            for idx in np.ndindex(*shape):
                raw, p = _eta_site(e, idx[0], [maps[c].block(s) for c, s in zip(kids, idx[1:])])
                w[idx] = p
                states[(idx[0], tuple(idx[1:]))] = raw / p if p > 0 else raw
            wl[x.path], el[x.path] = w, states
        pi.append(wl)
        eta.append(el)
    hat = {y.path: [_boundary_eta(maps[y], w) for w in maps[y].labels] for y in tree.enumerate_level(spec.k, n)}
    data = ClassicalData(spec.k, spec.d, n, dims, np.array(pi0), pi, frames)
    return data, FactorStates(eta0, eta, hat)


# --------------------------------------------------------------------------
# JSON

def _enc_matrix(a: np.ndarray) -> list:
    a = np.asarray(a, dtype=complex)
    return [[[float(v.real), float(v.imag)] for v in row] for row in a]


def _dec_matrix(rows) -> np.ndarray:
    return np.array([[complex(re, im) for re, im in row] for row in rows], dtype=complex)


def _key(path: tuple) -> str:
    return ".".join(str(i) for i in path)


def _path(key: str) -> tuple:
    return tuple(int(t) for t in key.split(".")) if key else ()


def _pair_key(w: int, sig: tuple) -> str:
    return f"{w}|" + ",".join(str(s) for s in sig)


def _pair(key: str) -> tuple:
    w, rest = key.split("|")
    return int(w), tuple(int(s) for s in rest.split(",")) if rest else ()


def to_json(data: ClassicalData, fs: FactorStates) -> str:
    doc = {
        "k": data.k, "d": data.d, "depth": data.depth,
        "sites": {_key(p): {"dims": [list(b) for b in data.dims[p]], "frame": _enc_matrix(data.frames[p])}
                  for p in sorted(data.dims, key=lambda p: (len(p), p))},
        "pi0": [float(v) for v in data.pi0],
        "pi": [{_key(p): np.asarray(w).tolist() for p, w in lev.items()} for lev in data.pi],
        "eta0": [_enc_matrix(e) for e in fs.eta0],
        "eta": [{_key(p): {_pair_key(w, s): _enc_matrix(m) for (w, s), m in d.items()} for p, d in lev.items()}
                for lev in fs.eta],
        "eta_hat": {_key(p): [_enc_matrix(m) for m in v] for p, v in fs.eta_hat.items()},
    }
    return json.dumps(doc)


def from_json(text: str) -> tuple[ClassicalData, FactorStates]:
    doc = json.loads(text) if isinstance(text, str) else text
    if doc.get("homogeneous"):
        return homogeneous_from_doc(doc)
    dims = {_path(p): [tuple(b) for b in s["dims"]] for p, s in doc["sites"].items()}
    frames = {_path(p): _dec_matrix(s["frame"]) for p, s in doc["sites"].items() if "frame" in s}
    pi = [{_path(p): np.array(w, dtype=float) for p, w in lev.items()} for lev in doc["pi"]]
    data = ClassicalData(doc["k"], doc["d"], doc["depth"], dims, np.array(doc["pi0"]), pi, frames)
    eta = [{_path(p): {_pair(key): _dec_matrix(m) for key, m in d.items()} for p, d in lev.items()}
           for lev in doc["eta"]]
    hat = {_path(p): [_dec_matrix(m) for m in v] for p, v in doc["eta_hat"].items()}
    return data, FactorStates([_dec_matrix(e) for e in doc["eta0"]], eta, hat)


def homogeneous_data(k: int, d: int, depth: int, dims, pi0, pi, eta0, eta, eta_hat,
                     frame: np.ndarray | None = None) -> tuple[ClassicalData, FactorStates]:
    """Reuse one block structure, one weight array and one set of factor states at every site.

    ``pi`` has shape ``(q,)*(k+1)``; ``eta`` maps ``(ω, σ_S)`` to a density.
    """
    sites = tree.ball(k, depth)
    frame = np.eye(d, dtype=complex) if frame is None else np.asarray(frame, dtype=complex)
    dims_map = {x.path: [tuple(b) for b in dims] for x in sites}
    frames = {x.path: frame for x in sites}
    pis = [{x.path: np.asarray(pi, dtype=float) for x in tree.enumerate_level(k, j)} for j in range(depth)]
    data = ClassicalData(k, d, depth, dims_map, np.asarray(pi0, dtype=float), pis, frames)
    etas = [{x.path: dict(eta) for x in tree.enumerate_level(k, j)} for j in range(depth)]
    hat = {y.path: list(eta_hat) for y in tree.enumerate_level(k, depth)}
    return data, FactorStates(list(eta0), etas, hat)


def homogeneous_from_doc(doc: dict) -> tuple[ClassicalData, FactorStates]:
    frame = _dec_matrix(doc["frame"]) if "frame" in doc else None
    eta = {_pair(key): _dec_matrix(m) for key, m in doc["eta"].items()}
    return homogeneous_data(doc["k"], doc["d"], doc["depth"], doc["dims"], doc["pi0"],
                            np.array(doc["pi"], dtype=float), [_dec_matrix(e) for e in doc["eta0"]],
                            eta, [_dec_matrix(m) for m in doc["eta_hat"]], frame)
