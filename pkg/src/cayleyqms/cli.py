"""Scenario runner: build a model from a JSON config, run verification suites, write a report."""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import disintegration as dis
from . import gibbs, hamiltonian, models, qms, reconstruction, tree
from .algebra import LabeledOperator, ResourceGuardError, partial_trace
from .transition import DEFAULT_MAX_DIM, apply_level, apply_level_blockwise, canonical_form

SUITES = ("canonical", "markov", "gibbs", "disintegrate", "reconstruct", "hamiltonian")
FIELDS = ("suite", "check", "anchor", "residual", "tolerance", "pass")

DEFAULT_TOLERANCES = {
    "site_reassembly": 1e-10,
    "level_reassembly": 1e-10,
    "markov": 1e-9,
    "nested_vs_density": 1e-11,
    "density_compatibility": 1e-10,
    "row_sums": 1e-12,
    "compatibility": 1e-12,
    "partition_sum": 1e-11,
    "label_probabilities": 1e-10,
    "disintegration": 1e-9,
    "component_markov": 1e-9,
    "normalization_precheck": 1e-10,
    "round_trip_density": 1e-9,
    "transition_identity": 1e-10,
    "potential_reassembly": 1e-9,
    "commutator": 1e-10,
    "hamiltonian_round_trip": 1e-9,
    "classical_gibbs": 1e-9,
}

ANCHORS = {
    "site_reassembly": "canonical block form of a localized transition expectation",
    "level_reassembly": "level range decomposition and blockwise application",
    "markov": "state invariance under the quasi-conditional expectation",
    "nested_vs_density": "nested transition evaluation of the Markov chain",
    "density_compatibility": "restriction consistency of finite-volume densities",
    "row_sums": "transition weights normalized per parent label",
    "compatibility": "compatibility of the finite-volume label measures",
    "partition_sum": "unit partition sum of the classical Hamiltonian",
    "label_probabilities": "label measure equals state of projection tensors",
    "disintegration": "disintegration into product components",
    "component_markov": "Markov property of each component",
    "normalization_precheck": "normalization of the Markov label measure",
    "round_trip_density": "reconstruction from classical data and factor states",
    "transition_identity": "block states of the reconstructed transitions",
    "potential_reassembly": "potential equals root plus bond plus boundary terms",
    "commutator": "commutation relations of the interaction terms",
    "hamiltonian_round_trip": "transition expectations from commuting Hamiltonians",
    "classical_gibbs": "diagonal expectations equal classical Gibbs averages",
}


class ConfigError(ValueError):
    pass


@dataclass
class Record:
    suite: str
    check: str
    anchor: str
    residual: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(math.isfinite(self.residual) and self.residual <= self.tolerance)


# --------------------------------------------------------------------------
# rendering

def format_number(x: float) -> str:
    """Plain decimal with 17 significant digits."""
    x = float(x)
    if not math.isfinite(x):
        return json.dumps(str(x))
    return np.format_float_positional(x, precision=17, unique=False, fractional=False, trim="-")


def render_json(records: list[Record]) -> str:
    lines = []
    for r in records:
        lines.append(
            "{" + ", ".join([
                f'"suite": {json.dumps(r.suite)}',
                f'"check": {json.dumps(r.check)}',
                f'"anchor": {json.dumps(r.anchor)}',
                f'"residual": {format_number(r.residual)}',
                f'"tolerance": {format_number(r.tolerance)}',
                f'"pass": {"true" if r.passed else "false"}',
            ]) + "}"
        )
    return "".join(line + "\n" for line in lines)


def render_csv(records: list[Record]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FIELDS)
    for r in records:
        w.writerow([r.suite, r.check, r.anchor, format_number(r.residual).strip('"'),
                     format_number(r.tolerance).strip('"'), "true" if r.passed else "false"])
    return buf.getvalue()


def render(records: list[Record], fmt: str) -> str:
    if fmt == "json":
        return render_json(records)
    if fmt == "csv":
        return render_csv(records)
    raise ConfigError(f"unknown output format {fmt!r}")


def parse_json_report(text: str) -> list[Record]:
    out = []
    for line in text.splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        out.append(Record(obj["suite"], obj["check"], obj["anchor"], float(obj["residual"]), float(obj["tolerance"])))
    return out


# --------------------------------------------------------------------------
# config

@dataclass
class Scenario:
    model: str
    k: int
    d: int
    q: int
    n: int
    seed: int
    params: dict
    suites: list[str]
    tolerances: dict[str, float]
    out_path: str | None
    fmt: str
    max_dim: int
    defects: list[dict]
    data_file: str | None
    dims: list | None


def _int(cfg, key, default=None):
    v = cfg.get(key, default)
    if v is None:
        raise ConfigError(f"missing integer field {key!r}")
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"field {key!r} must be an integer")
    return v


def load_scenario(path: str) -> Scenario:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    model = cfg.get("model")
    if model not in ("ising", "random", "reconstruction"):
        raise ConfigError("model must be one of ising, random, reconstruction")
    suites = cfg.get("suites", [])
    if not isinstance(suites, list) or any(s not in SUITES for s in suites):
        raise ConfigError(f"suites must be a subset of {list(SUITES)}")
    tol = dict(DEFAULT_TOLERANCES)
    for key, val in (cfg.get("tolerances") or {}).items():
        if key not in tol:
            raise ConfigError(f"unknown tolerance {key!r}")
        tol[key] = float(val)
    output = cfg.get("output") or {}
    data_file = cfg.get("data_file")
    if data_file is not None and not os.path.isabs(data_file):
        data_file = os.path.join(os.path.dirname(os.path.abspath(path)), data_file)
    if model == "reconstruction" and data_file is None:
        raise ConfigError("reconstruction model needs data_file")
    params = {}
    if model == "ising":
        for key in ("beta", "J", "Jp"):
            if key not in cfg:
                raise ConfigError(f"ising model needs {key!r}")
            params[key] = float(cfg[key])
    defects = cfg.get("defects") or []
    for dfc in defects:
        if dfc.get("kind") != "scale_weight" or not {"site", "row", "factor"} <= set(dfc):
            raise ConfigError("defects support kind=scale_weight with site, row, factor")
    d = 2 if model == "ising" else cfg.get("d")
    return Scenario(
        model=model,
        k=_int(cfg, "k", 2 if model != "reconstruction" else 0),
        d=d if d is not None else 0,
        q=cfg.get("q", 1),
        n=_int(cfg, "n", 1),
        seed=_int(cfg, "seed", 0),
        params=params,
        suites=list(suites),
        tolerances=tol,
        out_path=output.get("path"),
        fmt=output.get("format", "json"),
        max_dim=_int(cfg, "max_dim", DEFAULT_MAX_DIM),
        defects=list(defects),
        data_file=data_file,
        dims=cfg.get("dims"),
    )


# --------------------------------------------------------------------------
# suites

class Runner:
    def __init__(self, sc: Scenario):
        self.sc = sc
        self.records: list[Record] = []
        self.ising: models.IsingParams | None = None
        self.spec = self._build()

    def _build(self) -> qms.QmsSpec:
        sc = self.sc
        if sc.model == "reconstruction":
            try:
                with open(sc.data_file) as fh:
                    data, fs = reconstruction.from_json(fh.read())
            except (OSError, KeyError, ValueError) as exc:
                raise ConfigError(f"cannot load reconstruction data: {exc}") from exc
            sc.k, sc.d = data.k, data.d
            sc.n = min(sc.n, data.depth - 1)
            self._guard(sc.n)
            return reconstruction.reconstruct(data, fs, sc.max_dim)
        if sc.k < 1 or sc.n < 0:
            raise ConfigError("k must be >= 1 and n >= 0")
        self._guard(sc.n)
        if sc.model == "ising":
            self.ising = models.IsingParams(sc.params["beta"], sc.params["J"], sc.params["Jp"], sc.k)
            spec, _ = models.ising_competing_model(self.ising, sc.n)
            spec.max_dim = sc.max_dim
            return spec
        if sc.d is None or sc.d < 1:
            raise ConfigError("random model needs d >= 1")
        return models.random_localized_qms(sc.seed, sc.k, sc.d, sc.q, sc.n, sc.dims, sc.max_dim)

    def _guard(self, n: int) -> None:
        size = self.sc.d ** len(tree.ball(self.sc.k, n))
        if size > self.sc.max_dim:
            raise ResourceGuardError(f"d^|Λ_{n}| = {size} exceeds the dimension cap {self.sc.max_dim}")

    def _fits(self, sites: int) -> bool:
        return self.sc.d ** sites <= self.sc.max_dim

    def add(self, suite: str, check: str, residual: float, key: str | None = None) -> None:
        key = key or check
        self.records.append(Record(suite, check, ANCHORS[key], float(residual), self.sc.tolerances[key]))

    def run(self) -> list[Record]:
        for s in self.sc.suites:
            getattr(self, f"suite_{s}")()
        return self.records

    # ---- suites

    def suite_canonical(self):
        spec, n = self.spec, self.sc.n
        worst = 0.0
        for j in range(n + 1):
            for e in spec.levels[j].per_site:
                S = e.superoperator()
                c = canonical_form(S, e.site, spec.d, j, rng=self.sc.seed)
                worst = max(worst, float(np.abs(c.superoperator() - S).max()))
        self.add("canonical", "site_reassembly", worst)
        rng = np.random.default_rng(self.sc.seed)
        worst = 0.0
        for j in range(n):
            lev = spec.levels[j]
            sites = lev.sites + lev.next_sites
            if not self._fits(len(sites)):
                continue
            size = spec.d ** len(sites)
            a = LabeledOperator(sites, (spec.d,) * len(sites),
                                rng.standard_normal((size, size)) + 1j * rng.standard_normal((size, size)))
            worst = max(worst, float(np.abs(apply_level(lev, a).matrix - apply_level_blockwise(lev, a).matrix).max()))
        self.add("canonical", "level_reassembly", worst)

    def suite_markov(self):
        spec, n = self.spec, self.sc.n
        for j in range(n):
            self.add("markov", f"markov_level_{j}", qms.markov_residual(spec, j), "markov")
        rng = np.random.default_rng(self.sc.seed)
        sites = tree.ball(spec.k, n)
        rho = qms.density_matrix(spec, n).matrix
        worst = 0.0
        for _ in range(10):
            size = rho.shape[0]
            a = LabeledOperator(sites, (spec.d,) * len(sites),
                                rng.standard_normal((size, size)) + 1j * rng.standard_normal((size, size)))
            worst = max(worst, abs(qms.evaluate_nested(spec, a) - np.einsum("ij,ji->", rho, a.matrix)))
        self.add("markov", "nested_vs_density", worst)
        worst = 0.0
        for m in range(n):
            big = qms.density_matrix(spec, m + 1).rho
            small = qms.density_matrix(spec, m).rho
            worst = max(worst, float(np.abs(partial_trace(big, small.support).matrix - small.matrix).max()))
        self.add("markov", "density_compatibility", worst)

    def _defected(self, table: gibbs.GibbsTable) -> gibbs.GibbsTable:
        for dfc in self.sc.defects:
            try:
                site = tree.SiteCoord.from_label(str(dfc["site"]), table.k)
                table = gibbs.scale_weight(table, site, int(dfc["row"]), float(dfc["factor"]))
            except (ValueError, IndexError) as exc:
                raise ConfigError(f"bad defect {dfc}: {exc}") from exc
        return table

    def suite_gibbs(self):
        spec, n = self.spec, self.sc.n
        table = self._defected(gibbs.weights_from_qms(spec))
        self.add("gibbs", "row_sums", table.row_sum_residual())
        for m in range(n):
            self.add("gibbs", f"compatibility_{m}", gibbs.compatibility_check(table, m), "compatibility")
        for m in range(n + 1):
            try:
                z = abs(gibbs.partition_sum(table, m) - 1.0)
            except gibbs.DomainError:
                z = math.inf
            self.add("gibbs", f"partition_sum_{m}", z, "partition_sum")
        if not self.sc.defects:
            _, mu = gibbs.measure_array(table, n)
            qp = gibbs.quantum_label_probabilities(spec, n)
            self.add("gibbs", "label_probabilities", float(np.abs(mu - qp).max()))

    def suite_disintegrate(self):
        spec, n = self.spec, self.sc.n
        for m in range(n + 1):
            self.add("disintegrate", f"disintegration_{m}", dis.disintegration_check(spec, m), "disintegration")
        worst = 0.0
        confs = list(dis.configurations(spec, n))
        for sigma in (confs[0], confs[-1]):
            for j in range(n):
                worst = max(worst, dis.component_markov_residual(spec, sigma, j))
        self.add("disintegrate", "component_markov", worst)

    def suite_reconstruct(self):
        spec, n = self.spec, self.sc.n
        data, fs = reconstruction.extract_classical_data(spec, n)
        for dfc in self.sc.defects:
            try:
                site = tree.SiteCoord.from_label(str(dfc["site"]), data.k)
                w = data.pi[site.level][site.path].copy()
                w[int(dfc["row"])] *= float(dfc["factor"])
            except (ValueError, IndexError, KeyError) as exc:
                raise ConfigError(f"bad defect {dfc}: {exc}") from exc
            data.pi[site.level][site.path] = w
        pre = data.normalization_residual()
        self.add("reconstruct", "normalization_precheck", pre)
        if pre > self.sc.tolerances["normalization_precheck"]:
            return
        rebuilt = reconstruction.reconstruct(data, fs, self.sc.max_dim)
        resid = float(np.abs(qms.density_matrix(rebuilt, n).matrix - qms.density_matrix(spec, n).matrix).max())
        self.add("reconstruct", "round_trip_density", resid)
        worst = 0.0
        for j in range(n):
            worst = max(worst, reconstruction.transition_identity_residual(data, fs, j, seed=self.sc.seed))
        self.add("reconstruct", "transition_identity", worst)

    def suite_hamiltonian(self):
        spec, n = self.spec, self.sc.n
        D = hamiltonian.decompose(spec, n)
        self.add("hamiltonian", "potential_reassembly", hamiltonian.reassembly_residual(spec, D, n))
        for name, val in hamiltonian.commutation_residuals(D).items():
            self.add("hamiltonian", f"commutator_{name}", val, "commutator")
        rebuilt = hamiltonian.qms_from_hamiltonian(D)
        worst = 0.0
        for m in range(n + 1):
            worst = max(worst, float(np.abs(qms.density_matrix(rebuilt, m).matrix - qms.density_matrix(spec, m).matrix).max()))
        self.add("hamiltonian", "hamiltonian_round_trip", worst)
        if self.ising is not None:
            rho = qms.density_matrix(spec, n).matrix
            big_sites, w = models.classical_ising_weights(self.ising, n + 1)
            keep = len(tree.ball(spec.k, n))
            marg = w.sum(axis=tuple(range(keep, w.ndim))).reshape(-1)
            self.add("hamiltonian", "classical_gibbs", float(np.abs(np.diag(rho).real - marg).max()))


def run_scenario(path: str, out: str | None = None, fmt: str | None = None,
                 max_dim: int | None = None, stream=None) -> int:
    stream = sys.stdout if stream is None else stream
    try:
        sc = load_scenario(path)
        if max_dim is not None:
            sc.max_dim = max_dim
        if out is not None:
            sc.out_path = out
        if fmt is not None:
            sc.fmt = fmt
        if sc.fmt not in ("json", "csv"):
            raise ConfigError(f"unknown output format {sc.fmt!r}")
        runner = Runner(sc)
        records = runner.run()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ResourceGuardError as exc:
        print(f"resource guard: {exc}", file=sys.stderr)
        return 3
    text = render(records, sc.fmt)
    if sc.out_path:
        with open(sc.out_path, "w") as fh:
            fh.write(text)
    else:
        stream.write(text)
    return 0 if all(r.passed for r in records) else 1


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="cayleyqms", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run verification suites from a JSON config")
    run.add_argument("config")
    run.add_argument("--out", default=None, help="report path (default: config output.path or stdout)")
    run.add_argument("--format", choices=("json", "csv"), default=None)
    run.add_argument("--max-dim", type=int, default=None,
                     help="cap on the side dimension of materialized operators (default 2^14)")
    args = parser.parse_args(argv)
    return run_scenario(args.config, args.out, args.format, args.max_dim)


if __name__ == "__main__":
    sys.exit(main())

