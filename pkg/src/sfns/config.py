"""Experiment configuration: a flat JSON document with five sections.

Sections: ``basis`` (truncation), ``operators`` (A, C, gamma), ``noise``
(diagonal table, dense block or shell family), ``run`` (epsilon, dt, T,
replicas, master_seed, initial data) and ``outputs`` (directory,
observables, stride).  Every run validates the whole document and reports
*all* violated preconditions at once; a stable fingerprint of the
canonicalized document is embedded in every output file.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InvalidParameterError
from .integrators import ObservableSpec
from .operators import (
    dense_covariance,
    diagonal_covariance,
    make_QN,
    make_dissipation,
    zero_covariance,
)
from .spectral import field_from_entries, make_basis, unit_field, zero_field

_REQUIRED_SECTIONS = ("basis", "operators", "noise", "run", "outputs")


def canonical_json(doc):
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def fingerprint(doc):
    return hashlib.sha256(canonical_json(doc).encode()).hexdigest()[:16]


@dataclass
class ExperimentConfig:
    """Validated configuration with constructed model objects."""

    doc: dict
    fingerprint: str
    basis: object
    A: object
    C: object
    Q: object
    epsilon: float | None
    epsilons: list
    dt: float
    T: float
    replicas: int
    master_seed: int
    u0: object
    y0: object
    observables: list
    out_dir: str
    output_stride: int
    checkpoint_every: int


def _field_from_spec(basis, entries, violations, label):
    if entries is None:
        return zero_field(basis)
    out = []
    for e in entries:
        try:
            out.append(((int(e["k"][0]), int(e["k"][1])), e["parity"], float(e["value"])))
        except (KeyError, TypeError, ValueError):
            violations.append(f"{label}: malformed entry {e!r}")
            return zero_field(basis)
    try:
        return field_from_entries(basis, out)
    except InvalidParameterError as err:
        violations.append(f"{label}: {err}")
        return zero_field(basis)


def _noise_from_spec(basis, spec, violations):
    kind = spec.get("type")
    try:
        if kind == "diagonal":
            entries = [(tuple(e["k"]), e["parity"], float(e["q"]))
                       for e in spec.get("entries", [])]
            return diagonal_covariance(basis, entries)
        if kind == "dense":
            modes = [(tuple(e["k"]), e["parity"]) for e in spec["modes"]]
            return dense_covariance(basis, modes, np.asarray(spec["matrix"], dtype=float))
        if kind == "qn":
            return make_QN(int(spec["N"]), float(spec["delta"]),
                           float(spec["c_kappa"]), basis)
        if kind == "zero":
            return zero_covariance(basis)
    except (InvalidParameterError, KeyError, TypeError, ValueError) as err:
        violations.append(f"noise: {err}")
        return zero_covariance(basis)
    violations.append(f"noise: unknown type {kind!r}")
    return zero_covariance(basis)


def _observables_from_spec(basis, specs, stride, violations):
    out = []
    for s in specs:
        kind = s.get("kind")
        try:
            if kind == "pairing":
                h = unit_field(basis, tuple(s["k"]), s["parity"])
                name = s.get("name") or f"pairing_{s['k'][0]}_{s['k'][1]}_{s['parity']}"
                out.append(ObservableSpec("pairing", h=h, stride=stride, name=name))
            else:
                out.append(ObservableSpec(kind, stride=stride, name=s.get("name")))
        except (InvalidParameterError, KeyError, TypeError) as err:
            violations.append(f"observable {s!r}: {err}")
    return out


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return parse_config(doc)


def parse_config(doc):
    violations = []
    for section in _REQUIRED_SECTIONS:
        if section not in doc:
            violations.append(f"missing section {section!r}")
    if violations:
        raise ConfigError(violations)

    basis_sec = doc["basis"]
    ops = doc["operators"]
    run = doc["run"]
    outputs = doc["outputs"]

    try:
        basis = make_basis(int(basis_sec.get("K", 0)))
    except (InvalidParameterError, TypeError, ValueError) as err:
        violations.append(f"basis: {err}")
        raise ConfigError(violations)

    def build_op(spec, label):
        try:
            kind = spec["kind"]
            kwargs = {k: float(v) for k, v in spec.items() if k != "kind"}
            return make_dissipation(kind, basis, **kwargs)
        except (InvalidParameterError, KeyError, TypeError, ValueError) as err:
            violations.append(f"operators.{label}: {err}")
            return make_dissipation("friction", basis, chi=1.0)

    A = build_op(ops.get("A", {}), "A")
    C = build_op(ops.get("C", {}), "C")
    Q = _noise_from_spec(basis, doc["noise"], violations)

    epsilon = run.get("epsilon")
    epsilons = run.get("epsilons") or ([] if epsilon is None else [epsilon])
    for e in epsilons:
        if not (0 < float(e) <= 1):
            violations.append(f"run.epsilon {e} outside (0, 1]")
    dt = float(run.get("dt", 0.0))
    T = float(run.get("T", 0.0))
    if dt <= 0:
        violations.append("run.dt must be > 0")
    if T < dt:
        violations.append("run.T must be >= dt")
    replicas = int(run.get("replicas", 0))
    if replicas < 2:
        violations.append("run.replicas must be >= 2")
    if "master_seed" not in run:
        violations.append("run.master_seed is mandatory (no entropy default)")
    master_seed = int(run.get("master_seed", 0))

    u0 = _field_from_spec(basis, run.get("u0"), violations, "run.u0")
    y0 = _field_from_spec(basis, run.get("y0"), violations, "run.y0")

    stride = int(outputs.get("output_stride", 1))
    if stride < 1:
        violations.append("outputs.output_stride must be >= 1")
    observables = _observables_from_spec(
        basis, outputs.get("observables", []), max(stride, 1), violations)

    if violations:
        raise ConfigError(violations)

    return ExperimentConfig(
        doc=doc,
        fingerprint=fingerprint(doc),
        basis=basis,
        A=A,
        C=C,
        Q=Q,
        epsilon=float(epsilon) if epsilon is not None else None,
        epsilons=[float(e) for e in epsilons],
        dt=dt,
        T=T,
        replicas=replicas,
        master_seed=master_seed,
        u0=u0,
        y0=y0,
        observables=observables,
        out_dir=outputs.get("directory", "out"),
        output_stride=stride,
        checkpoint_every=int(outputs.get("checkpoint_every", 0)),
    )
