import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cayleyqms import tree
from cayleyqms.algebra import (
    LabeledOperator,
    SubalgebraBasis,
    central_decompose,
    embed,
    random_density,
    random_unitary,
    superoperator,
)
from cayleyqms.models import random_localized_qms
from cayleyqms.transition import (
    NonConvergentError,
    SiteMap,
    apply_level,
    apply_level_blockwise,
    canonical_form,
    cesaro_limit,
    level_block_state,
    level_labels,
    map_from_callable,
    quasi_conditional_expectation,
    range_decomposition,
)

R1 = tree.root(1)


def _rand(rng, n):
    return rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))


def _classical_ce(omegas):
    """``a -> Σ_i |i><i| Tr[(|i><i| ⊗ ω_i) a]`` on ``M_2 ⊗ M_2``."""

    def E(a):
        t = a.reshape(2, 2, 2, 2)
        return np.diag([np.einsum("ab,ba->", t[i, :, i, :], omegas[i]) for i in range(2)])

    return E


def test_canonical_form_of_diagonal_expectation():
    rng = np.random.default_rng(0)
    omegas = [random_density(rng, 2) for _ in range(2)]
    c = canonical_form(_classical_ce(omegas), R1, 2)
    assert sorted(b.dims for b in c.blocks) == [(1, 1), (1, 1)]
    for b, rho in zip(c.blocks, c.states):
        i = int(np.argmax(np.diag(b.projection).real))
        np.testing.assert_allclose(rho, omegas[i], atol=1e-12)
    assert c.reconstruction_residual < 1e-13


def test_canonical_form_of_slice_map():
    rng = np.random.default_rng(1)
    omega = random_density(rng, 2)
    c = canonical_form(lambda a: np.einsum("iajb,ba->ij", a.reshape(2, 2, 2, 2), omega), R1, 2)
    assert [b.dims for b in c.blocks] == [(2, 1)]
    np.testing.assert_allclose(c.states[0], omega, atol=1e-12)


def test_canonical_form_with_multiplicity_block():
    # B_x = C^2 ⊗ C^2 with range M_2 ⊗ 1; the block state lives on the inert factor and the child
    rng = np.random.default_rng(2)
    rho = random_density(rng, 2 * 4)
    U = random_unitary(rng, 4)
    Ue = np.kron(U, np.eye(4))

    def E(a):
        t = (Ue.conj().T @ a @ Ue).reshape(2, 8, 2, 8)
        return U @ np.kron(np.einsum("iajb,ba->ij", t, rho), np.eye(2)) @ U.conj().T

    c = canonical_form(E, R1, 4)
    assert [b.dims for b in c.blocks] == [(2, 2)]
    assert c.reconstruction_residual < 1e-12


def test_reverse_children_flag():
    spec = random_localized_qms(4, 2, 2, 2, 0)
    e = spec.levels[0].per_site[0]
    S = e.superoperator()

    # the same map reading its children in reverse order
    def swapped(a):
        t = a.reshape(2, 2, 2, 2, 2, 2).transpose(0, 2, 1, 3, 5, 4).reshape(8, 8)
        return e(t)

    c = canonical_form(swapped, e.site, 2, reverse_children=True)
    np.testing.assert_allclose(c.superoperator(), S, atol=1e-12)


@pytest.mark.parametrize("bad", ["transpose", "non_unital", "non_idempotent"])
def test_canonical_form_rejects_non_expectations(bad):
    rng = np.random.default_rng(5)
    omega = random_density(rng, 2)

    def slice_map(a):
        return np.einsum("iajb,ba->ij", a.reshape(2, 2, 2, 2), omega)

    U = random_unitary(rng, 2)
    maps = {
        "transpose": lambda a: slice_map(a).T,
        "non_unital": lambda a: 0.5 * slice_map(a),
        "non_idempotent": lambda a: U @ slice_map(a) @ U.conj().T,
    }
    with pytest.raises(ValueError):
        canonical_form(maps[bad], R1, 2)


def test_invalid_block_label():
    e = random_localized_qms(0, 1, 2, 2, 0).levels[0].per_site[0]
    with pytest.raises(ValueError):
        e.block(5)


# ---------------------------------------------------------------- levels

def _product_oracle(level, factors):
    """Level map on a product operator: one site map per vertex of W_j."""
    out = np.ones((1, 1), dtype=complex)
    for e in level.per_site:
        local = factors[e.site]
        for c in e.children:
            local = np.kron(local, factors[c])
        out = np.kron(out, e(local))
    return out


@pytest.mark.parametrize("k,d,q", [(2, 2, 2), (1, 4, 2), (2, 2, 1)])
def test_level_map_on_product_operators(k, d, q):
    rng = np.random.default_rng(6)
    spec = random_localized_qms(6, k, d, q, 1)
    lev = spec.levels[1]
    sites = lev.sites + lev.next_sites
    total = np.zeros((d ** len(sites),) * 2, dtype=complex)
    expect = 0
    for _ in range(3):
        f = {s: _rand(rng, d) for s in sites}
        prod = np.ones((1, 1), dtype=complex)
        for s in sites:
            prod = np.kron(prod, f[s])
        total += prod
        expect = expect + _product_oracle(lev, f)
    out = apply_level(lev, LabeledOperator(sites, (d,) * len(sites), total))
    assert out.support == lev.sites
    np.testing.assert_allclose(out.matrix, expect, atol=1e-11)


def test_range_decomposition_matches_independent_decomposition():
    spec = random_localized_qms(7, 2, 2, 2, 1)
    lev = spec.levels[1]
    labels, dec = range_decomposition(lev)
    assert labels == level_labels(lev)
    assert dec.check() < 1e-10
    # range of the level map computed from the images of matrix units of W_1 ∪ W_2
    sites = lev.sites + lev.next_sites
    ext = np.eye(2 ** len(lev.next_sites))
    gens = []
    for i in range(4):
        for j in range(4):
            u = np.zeros((4, 4), dtype=complex)
            u[i, j] = 1
            a = LabeledOperator(sites, (2,) * len(sites), np.kron(u, ext))
            gens.append(apply_level(lev, a).matrix)
    ref = central_decompose(SubalgebraBasis(4, gens), 1)
    assert sorted(b.dims for b in ref.blocks) == sorted(b.dims for b in dec.blocks)
    for b in dec.blocks:
        assert min(np.abs(b.projection - r.projection).max() for r in ref.blocks) < 1e-9


def test_blockwise_application_and_block_states():
    rng = np.random.default_rng(8)
    spec = random_localized_qms(8, 2, 2, 2, 1)
    lev = spec.levels[0]
    sites = lev.sites + lev.next_sites
    a = LabeledOperator(sites, (2,) * 3, _rand(rng, 8))
    np.testing.assert_allclose(apply_level_blockwise(lev, a).matrix, apply_level(lev, a).matrix, atol=1e-12)
    for lab in level_labels(lev):
        rho = level_block_state(lev, lab)
        assert abs(np.trace(rho) - 1) < 1e-12


def test_level_bimodule_property():
    rng = np.random.default_rng(9)
    spec = random_localized_qms(9, 2, 2, 2, 1)
    lev = spec.levels[1]
    sites = lev.sites + lev.next_sites
    N = 2 ** len(sites)
    _, dec = range_decomposition(lev)
    Dj = 2 ** len(lev.sites)
    ext = np.eye(N // Dj)
    a = _rand(rng, N)

    def central(rng):
        return sum(b.isometry @ np.kron(_rand(rng, b.n), np.eye(b.m)) @ b.isometry.conj().T for b in dec.blocks)

    c1, c2 = central(rng), central(rng)
    lhs = apply_level(lev, LabeledOperator(sites, (2,) * len(sites), np.kron(c1, ext) @ a @ np.kron(c2, ext)))
    rhs = c1 @ apply_level(lev, LabeledOperator(sites, (2,) * len(sites), a)).matrix @ c2
    np.testing.assert_allclose(lhs.matrix, rhs, atol=1e-11)


def test_quasi_conditional_expectation_acts_trivially_below():
    rng = np.random.default_rng(10)
    spec = random_localized_qms(10, 2, 2, 2, 1)
    Ej = quasi_conditional_expectation(spec.levels[1], 1)
    b = LabeledOperator((tree.root(2),), (2,), _rand(rng, 2))
    upper_sites = spec.levels[1].sites + spec.levels[1].next_sites
    c = LabeledOperator(upper_sites, (2,) * 6, _rand(rng, 64))
    full = LabeledOperator((tree.root(2),) + upper_sites, (2,) * 7, np.kron(b.matrix, c.matrix))
    got = Ej(full)
    expect = np.kron(b.matrix, apply_level(spec.levels[1], c).matrix)
    np.testing.assert_allclose(got.matrix, expect, atol=1e-11)
    with pytest.raises(ValueError):
        quasi_conditional_expectation(spec.levels[1], 0)


def test_site_map_wraps_callable():
    rng = np.random.default_rng(11)
    omega = random_density(rng, 2)
    m = map_from_callable(lambda a: np.einsum("iajb,ba->ij", a.reshape(2, 2, 2, 2), omega), R1, 2)
    assert isinstance(m, SiteMap)
    a = _rand(rng, 4)
    np.testing.assert_allclose(m(a), np.einsum("iajb,ba->ij", a.reshape(2, 2, 2, 2), omega))
    full = embed(LabeledOperator((R1,), (2,), np.eye(2)), (R1, R1.child(1)), (2, 2))
    np.testing.assert_allclose(m(full.matrix), np.eye(2), atol=1e-14)


# ---------------------------------------------------------------- ergodic limits

def _spectral_average(T, m):
    """``(1/m) Σ_{h=1}^m T^h`` from an eigendecomposition, with the exact finite-m weights."""
    lam, R = np.linalg.eig(T)
    L = np.linalg.inv(R)
    w = np.where(np.abs(lam - 1) < 1e-9, 1.0, lam * (1 - lam ** m) / (m * (1 - lam + (np.abs(lam - 1) < 1e-9))))
    return (R * w) @ L


def _random_channel_dual(rng, d, r=2):
    K = [_rand(rng, d) for _ in range(r)]
    S = sum(k.conj().T @ k for k in K)
    w, v = np.linalg.eigh(S)
    Sm = (v / np.sqrt(w)) @ v.conj().T
    K = [k @ Sm for k in K]
    return superoperator(lambda a: sum(k.conj().T @ a @ k for k in K), d)


@pytest.mark.parametrize("seed", range(5))
def test_cesaro_limit_against_finite_average(seed):
    rng = np.random.default_rng(seed)
    T = _random_channel_dual(rng, 2)
    P = cesaro_limit(T)
    np.testing.assert_allclose(P @ P, P, atol=1e-10)
    np.testing.assert_allclose(T @ P, P, atol=1e-10)
    np.testing.assert_allclose(P @ (np.eye(2) + 0j).reshape(-1), np.eye(2).reshape(-1), atol=1e-10)
    m = 500
    acc, Pm = np.zeros_like(T), np.eye(4, dtype=complex)
    for _ in range(m):
        Pm = T @ Pm
        acc += Pm
    np.testing.assert_allclose(acc / m, _spectral_average(T, m), atol=1e-10)
    # the gap to the limit is the non-fixed spectral part and decays like 1/m
    assert np.abs(acc / m - P).max() < 10.0 / m


def test_cesaro_limit_of_callable_and_jordan_block():
    rng = np.random.default_rng(3)
    omega = random_density(rng, 2)
    P = cesaro_limit(lambda a: np.trace(a @ omega) * np.eye(2), 2)
    np.testing.assert_allclose(P, superoperator(lambda a: np.trace(a @ omega) * np.eye(2), 2), atol=1e-12)
    with pytest.raises(NonConvergentError):
        cesaro_limit(np.array([[1.0, 1.0], [0.0, 1.0]]))
    np.testing.assert_allclose(cesaro_limit(0.5 * np.eye(3)), np.zeros((3, 3)))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_cesaro_limit_is_fixed_by_idempotents(seed):
    e = random_localized_qms(seed, 1, 2, 2, 0).levels[0].per_site[0]
    P = superoperator(lambda a: np.kron(e(a), np.eye(2)), 4)
    np.testing.assert_allclose(P @ P, P, atol=1e-12)
    np.testing.assert_allclose(cesaro_limit(P), P, atol=1e-10)
