import itertools
import math

import numpy as np
import pytest

from cayleyqms import gibbs, tree
from cayleyqms.gibbs import (
    Configuration,
    DomainError,
    classical_hamiltonian,
    compatibility_check,
    export_csv,
    log_probability,
    measure,
    measure_array,
    partition_sum,
    quantum_label_probabilities,
    scale_weight,
    weights_from_qms,
)
from cayleyqms.models import random_localized_qms


@pytest.fixture(scope="module")
def spec():
    return random_localized_qms(11, 2, 2, 2, 2)


@pytest.fixture(scope="module")
def table(spec):
    return weights_from_qms(spec)


def _brute_measure(table, n):
    """μ_{Λ_n} by looping over configurations and multiplying weights one by one."""
    sites = tree.ball(table.k, n)
    out = {}
    for labels in itertools.product(*[range(table.count(x)) for x in sites]):
        lab = dict(zip(sites, labels))
        p = table.initial[lab[tree.root(table.k)]]
        for x in tree.ball(table.k, n - 1) if n > 0 else ():
            p *= table.weight(x)[(lab[x],) + tuple(lab[c] for c in tree.direct_successors(x))]
        out[labels] = p
    return out


def test_single_block_sites_have_trivial_weights():
    t = weights_from_qms(random_localized_qms(0, 2, 2, 1, 2))
    np.testing.assert_allclose(t.initial, [1.0])
    for lev in t.weights:
        for w in lev.values():
            np.testing.assert_allclose(w, 1.0)
    assert measure(t, 2) == {(0,) * 7: pytest.approx(1.0)}
    assert compatibility_check(t, 1) == pytest.approx(0.0, abs=1e-15)
    _, H = classical_hamiltonian(t, 2)
    np.testing.assert_allclose(H, 0.0, atol=1e-15)


def test_weights_match_projection_tensors(spec, table):
    # π_x(ω, σ) = φ_ω(1 ⊗ P_σ) from the block state of the parent
    maps = {e.site: e for lev in spec.levels for e in lev.per_site}
    for j in range(table.depth):
        for x in tree.enumerate_level(2, j):
            e = maps[x]
            kids = [maps[c] for c in e.children]
            for idx in np.ndindex(*table.weight(x).shape):
                w, s = idx[0], idx[1:]
                P = np.kron(kids[0].block(s[0]).projection, kids[1].block(s[1]).projection)
                X = np.kron(np.eye(e.block(w).m), P)
                val = np.trace(e.states[w] @ X).real
                assert abs(val - table.weight(x)[idx]) < 1e-14
    assert table.row_sum_residual() < 1e-13


@pytest.mark.parametrize("n", [0, 1, 2])
def test_measure_matches_brute_force(table, n):
    ref = _brute_measure(table, n)
    got = measure(table, n)
    assert len(got) == 2 ** len(tree.ball(2, n))
    assert max(abs(got[s] - ref[s]) for s in ref) < 1e-15
    assert abs(sum(got.values()) - 1) < 1e-12
    sites = tree.ball(2, n)
    for labels in list(ref)[:5]:
        lp = log_probability(table, Configuration(sites, labels))
        assert abs(math.exp(lp) - ref[labels]) < 1e-15


def test_measure_equals_quantum_projections(spec, table):
    _, mu = measure_array(table, 2)
    np.testing.assert_allclose(quantum_label_probabilities(spec, 2), mu, atol=1e-13)


@pytest.mark.parametrize("n", [0, 1])
def test_compatibility_and_partition_sum(table, n):
    assert compatibility_check(table, n) <= 1e-12
    assert abs(partition_sum(table, n + 1) - 1) <= 1e-11


def test_energy_reexponentiates_to_measure(table):
    _, H = classical_hamiltonian(table, 2)
    _, mu = measure_array(table, 2)
    np.testing.assert_allclose(np.exp(H), mu, atol=1e-13)


def test_unnormalized_row_gives_analytic_defect(table):
    x, row, factor = tree.SiteCoord((1,), 2), 0, 1.1
    bad = scale_weight(table, x, row, factor)
    assert bad.row_sum_residual() == pytest.approx(0.1, rel=1e-12)
    # a defect at level 1 shows up when extending Λ_1 to Λ_2, scaled by μ_{Λ_1}(σ) on σ(x) = row
    _, mu1 = measure_array(table, 1)
    expected = (factor - 1) * mu1[:, row, :].max()
    assert compatibility_check(bad, 1) == pytest.approx(expected, rel=1e-12)
    assert compatibility_check(bad, 0) < 1e-13
    with pytest.raises(ValueError):
        scale_weight(table, tree.SiteCoord((1, 1), 2), 0, 2.0)


def test_sampled_compatibility_agrees_with_exhaustive(table, monkeypatch):
    bad = scale_weight(table, tree.SiteCoord((2,), 2), 1, 0.8)
    exhaustive = compatibility_check(bad, 1)
    monkeypatch.setattr(gibbs, "EXHAUSTIVE_CAP", 8)
    monkeypatch.setattr(gibbs, "SAMPLE_SIZE", 2000)
    assert compatibility_check(bad, 1, seed=3) == pytest.approx(exhaustive, rel=1e-12)
    assert compatibility_check(table, 1, seed=3) < 1e-14


def test_vanishing_weight_has_no_energy(table):
    zero = scale_weight(table, tree.root(2), 0, 0.0)
    with pytest.raises(DomainError):
        classical_hamiltonian(zero, 1)
    text = export_csv(zero, 1)
    rows = text.strip().split("\n")
    assert rows[0] == "configuration,probability,energy"
    assert len(rows) == 1 + 8
    assert all(r.endswith(",") for r in rows[1:])


def test_export_csv_round_trips_probabilities(table, tmp_path):
    path = tmp_path / "mu.csv"
    text = export_csv(table, 1, path)
    assert path.read_text() == text
    _, mu = measure_array(table, 1)
    for line in text.strip().split("\n")[1:]:
        conf, prob, energy = line.split(",")
        idx = tuple(int(c) for c in conf)
        assert float(prob) == pytest.approx(mu[idx], rel=1e-15)
        assert float(energy) == pytest.approx(math.log(mu[idx]), rel=1e-14)


def test_depth_and_label_errors(table):
    with pytest.raises(ValueError):
        measure(table, table.depth + 1)
    with pytest.raises(ValueError):
        log_probability(table, Configuration(tree.ball(2, 1), (0, 5, 0)))
    with pytest.raises(ValueError):
        Configuration(tree.ball(2, 1), (0,))
