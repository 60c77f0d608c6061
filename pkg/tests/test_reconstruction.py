import json

import numpy as np
import pytest

from cayleyqms import tree
from cayleyqms.gibbs import Configuration, measure_array, weights_from_qms
from cayleyqms.models import random_classical_data, random_localized_qms
from cayleyqms.qms import density_matrix, markov_residual
from cayleyqms.reconstruction import (
    ClassicalData,
    NormalizationError,
    assemble_state,
    boundary_state,
    derive_transition_states,
    extract_classical_data,
    from_json,
    homogeneous_data,
    markov_measure,
    reconstruct,
    to_json,
    transition_identity_residual,
    verify_reconstruction,
)


@pytest.fixture(scope="module")
def pair():
    return random_classical_data(31, 2, 2, 2, 2)


def _brute_mass(data, n):
    sites, mu = markov_measure(data, n)
    return float(mu.sum())


def test_single_label_measure():
    data, _ = random_classical_data(0, 2, 2, 1, 2)
    _, mu = markov_measure(data, 2)
    assert mu.shape == (1,) * 7
    assert mu.reshape(-1)[0] == pytest.approx(1.0)


@pytest.mark.parametrize("n", [0, 1, 2])
def test_markov_measure_is_normalized(pair, n):
    data, _ = pair
    assert _brute_mass(data, n) == pytest.approx(1.0, abs=1e-13)


def test_markov_measure_matches_gibbs_measure_of_reconstruction(pair):
    data, fs = pair
    spec = reconstruct(data, fs)
    table = weights_from_qms(spec)
    for n in range(table.depth + 1):
        np.testing.assert_allclose(measure_array(table, n)[1], markov_measure(data, n)[1], atol=1e-14)


def test_assembled_state_against_projections(pair):
    data, fs = pair
    rho = assemble_state(data, fs, 1)
    assert abs(np.trace(rho) - 1) < 1e-13
    sites, mu = markov_measure(data, 1)
    for idx in np.ndindex(*mu.shape):
        P = np.ones((1, 1), dtype=complex)
        for x, s in zip(sites, idx):
            V = data.isometry(x, s)
            P = np.kron(P, V @ V.conj().T)
        assert abs(np.trace(rho @ P) - mu[idx]) < 1e-14


def test_reconstructed_densities_match_assembly(pair):
    data, fs = pair
    rep = verify_reconstruction(data, fs, 2)
    assert rep.precheck_ok
    assert rep.max_residual < 1e-12
    spec = reconstruct(data, fs)
    for j in range(spec.depth):
        assert markov_residual(spec, j) < 1e-12


def test_transition_states_are_normalized_and_realize_the_identity(pair):
    data, fs = pair
    for j in range(data.depth):
        for e in derive_transition_states(data, fs, j):
            for rho in e.states:
                assert abs(np.trace(rho) - 1) < 1e-13
                assert np.linalg.eigvalsh(rho).min() > -1e-13
        assert transition_identity_residual(data, fs, j, seed=j) < 1e-12


def test_trivial_multiplicity_reduces_to_eta():
    data, fs = random_classical_data(2, 1, 2, 1, 2, scramble=False)
    assert data.dims[()] == [(2, 1)]
    (e,) = derive_transition_states(data, fs, 0)
    np.testing.assert_allclose(e.states[0], fs.eta[0][()][(0, (0,))], atol=1e-14)


def test_boundary_state_is_marginal_of_next_level(pair):
    data, fs = pair
    y = tree.SiteCoord((1,), 2)
    for w in range(data.count(y)):
        zeta = boundary_state(data, fs, y, w)
        assert abs(np.trace(zeta) - 1) < 1e-13
    leaf = tree.SiteCoord((1, 2), 2)
    np.testing.assert_allclose(boundary_state(data, fs, leaf, 1), fs.eta_hat[leaf.path][1])


@pytest.mark.parametrize("k,d,q,n", [(2, 2, 2, 2), (1, 4, 2, 2), (2, 4, 2, 1)])
def test_extract_then_reconstruct_round_trip(k, d, q, n):
    spec = random_localized_qms(5, k, d, q, n)
    data, fs = extract_classical_data(spec, n)
    assert data.normalization_residual() < 1e-12
    rebuilt = reconstruct(data, fs)
    for m in range(n + 1):
        if spec.site_dim(m) <= spec.max_dim:
            np.testing.assert_allclose(density_matrix(rebuilt, m).matrix, density_matrix(spec, m).matrix, atol=1e-12)


def test_perturbed_weight_fails_precheck(pair):
    data, fs = pair
    bad = ClassicalData(data.k, data.d, data.depth, data.dims, data.pi0,
                        [dict(lev) for lev in data.pi], data.frames)
    w = bad.pi[0][()].copy()
    w[0, 0, 0] *= 1.1
    bad.pi[0][()] = w
    rep = verify_reconstruction(bad, fs, 1)
    assert not rep.precheck_ok
    assert rep.precheck_residual == pytest.approx(0.1 * data.pi[0][()][0, 0, 0], rel=1e-10)
    with pytest.raises(NormalizationError):
        reconstruct(bad, fs)


def test_json_round_trip(pair):
    data, fs = pair
    text = to_json(data, fs)
    d2, f2 = from_json(text)
    assert to_json(d2, f2) == text
    np.testing.assert_array_equal(assemble_state(d2, f2, 1), assemble_state(data, fs, 1))


def test_homogeneous_document():
    rng = np.random.default_rng(7)
    from cayleyqms.algebra import random_density
    pi = rng.random((2, 2, 2)) + 0.1
    pi /= pi.reshape(2, -1).sum(axis=1)[:, None, None]
    eta = {(w, (a, b)): random_density(rng, 1) for w in range(2) for a in range(2) for b in range(2)}
    doc = {
        "homogeneous": True, "k": 2, "d": 2, "depth": 2, "dims": [[1, 1], [1, 1]],
        "pi0": [0.3, 0.7], "pi": pi.tolist(),
        "eta0": [[[[1.0, 0.0]]], [[[1.0, 0.0]]]],
        "eta": {f"{w}|{a},{b}": [[[1.0, 0.0]]] for (w, (a, b)) in eta},
        "eta_hat": [[[[1.0, 0.0]]], [[[1.0, 0.0]]]],
    }
    data, fs = from_json(json.dumps(doc))
    ref, _ = homogeneous_data(2, 2, 2, [(1, 1), (1, 1)], [0.3, 0.7], pi, [np.eye(1)] * 2, eta, [np.eye(1)] * 2)
    np.testing.assert_allclose(markov_measure(data, 2)[1], markov_measure(ref, 2)[1])
    # diagonal model: the reconstructed state is the classical Markov chain
    spec = reconstruct(data, fs)
    np.testing.assert_allclose(np.diag(density_matrix(spec, 2).matrix).real,
                               markov_measure(data, 2)[1].reshape(-1), atol=1e-14)


def test_invalid_inputs(pair):
    data, fs = pair
    with pytest.raises(ValueError):
        ClassicalData(2, 3, 1, {(): [(1, 1)]}, [1.0], [{(): np.ones((1, 1, 1))}])
    with pytest.raises(ValueError):
        markov_measure(data, data.depth + 1)
    with pytest.raises(ValueError):
        derive_transition_states(data, fs, data.depth)
    with pytest.raises(ValueError):
        extract_classical_data(random_localized_qms(0, 2, 2, 2, 1), 2)
    with pytest.raises(ValueError):
        Configuration(tree.ball(2, 1), (0, 0))
