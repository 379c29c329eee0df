"""Snapshots, checkpoints and CSV emission.

Snapshot format (binary, little-endian): magic ``MSF1``, version u32,
truncation level K u32, mode count u32, then the coefficients as IEEE-754
f64 in basis order.  Checkpoints are JSON documents carrying completed
replica indices and hex-encoded sample rows, so a resumed ensemble is
bitwise identical to an uninterrupted one.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import InvalidParameterError
from .spectral import SpectralField

SNAPSHOT_MAGIC = b"MSF1"
SNAPSHOT_VERSION = 1


def write_snapshot(path, field: SpectralField):
    coeffs = np.ascontiguousarray(field.coeffs, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<III", SNAPSHOT_VERSION, field.basis.K, coeffs.size))
        fh.write(coeffs.tobytes())


def read_snapshot(path, basis=None):
    """Read a snapshot; returns (K, coeffs) or a SpectralField when a basis
    is supplied (validated against K and mode count)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != SNAPSHOT_MAGIC:
            raise InvalidParameterError(f"bad snapshot magic {magic!r}")
        version, K, count = struct.unpack("<III", fh.read(12))
        if version != SNAPSHOT_VERSION:
            raise InvalidParameterError(f"unsupported snapshot version {version}")
        raw = fh.read(8 * count)
        if len(raw) != 8 * count:
            raise InvalidParameterError("truncated snapshot payload")
        coeffs = np.frombuffer(raw, dtype="<f8").copy()
    if basis is None:
        return K, coeffs
    if basis.K != K or basis.size != count:
        raise InvalidParameterError(
            f"snapshot (K={K}, {count} modes) does not match basis "
            f"(K={basis.K}, {basis.size} modes)")
    return SpectralField(basis, coeffs)


def _header_lines(fingerprint, version):
    return [f"# fingerprint={fingerprint}", f"# version={version}"]


def write_stats_csv(path, fingerprint, version, result):
    """Long-form samples: replica,t,observable,value."""
    lines = _header_lines(fingerprint, version)
    lines.append("replica,t,observable,value")
    for name in sorted(result.samples):
        grid = result.times[name]
        rows = result.samples[name]
        for replica in range(rows.shape[0]):
            for j, t in enumerate(grid):
                lines.append(f"{replica},{t!r},{name},{rows[replica, j]!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_comparison_csv(path, fingerprint, version, rows):
    """Comparison table: epsilon,observable,mean_diff,var_diff,ks,se_mean,n."""
    lines = _header_lines(fingerprint, version)
    lines.append("epsilon,observable,mean_diff,var_diff,ks,se_mean,n")
    for eps, cmp in rows:
        lines.append(
            f"{eps!r},{cmp.observable},{cmp.mean_diff!r},{cmp.var_diff!r},"
            f"{cmp.ks_distance!r},{cmp.se_mean!r},{min(cmp.n_a, cmp.n_b)}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_table_csv(path, fingerprint, version, header, rows):
    lines = _header_lines(fingerprint, version)
    lines.append(header)
    for row in rows:
        lines.append(",".join(repr(x) if isinstance(x, float) else str(x) for x in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_manifest(path, fingerprint, version, status, files, note=None):
    doc = {
        "fingerprint": fingerprint,
        "version": version,
        "status": status,
        "files": sorted(files),
    }
    if note:
        doc["note"] = note
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- ensemble checkpoints ------------------------------------------------------

def write_ensemble_checkpoint(path, fingerprint, kind, master_seed, times,
                              done_rows):
    """Persist completed replica rows; hex-encoded f64 keeps them bit-exact."""
    doc = {
        "kind": kind,
        "fingerprint": fingerprint,
        "master_seed": master_seed,
        "times": {k: np.asarray(v, dtype="<f8").tobytes().hex()
                  for k, v in times.items()},
        "replicas": {
            str(i): {k: np.asarray(v, dtype="<f8").tobytes().hex()
                     for k, v in rows.items()}
            for i, rows in done_rows.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def read_ensemble_checkpoint(path, fingerprint):
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("fingerprint") != fingerprint:
        raise InvalidParameterError(
            "checkpoint fingerprint does not match the configuration")
    times = {k: np.frombuffer(bytes.fromhex(v), dtype="<f8")
             for k, v in doc["times"].items()}
    rows = {
        int(i): {k: np.frombuffer(bytes.fromhex(v), dtype="<f8")
                 for k, v in obs.items()}
        for i, obs in doc["replicas"].items()
    }
    return doc["kind"], int(doc["master_seed"]), times, rows


def write_eddy_checkpoint(path, fingerprint, step_index, field: SpectralField):
    doc = {
        "fingerprint": fingerprint,
        "step_index": int(step_index),
        "K": field.basis.K,
        "coeffs": np.ascontiguousarray(field.coeffs, dtype="<f8").tobytes().hex(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def read_eddy_checkpoint(path, fingerprint, basis):
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("fingerprint") != fingerprint:
        raise InvalidParameterError(
            "checkpoint fingerprint does not match the configuration")
    if doc.get("K") != basis.K:
        raise InvalidParameterError("checkpoint truncation does not match basis")
    coeffs = np.frombuffer(bytes.fromhex(doc["coeffs"]), dtype="<f8")
    return int(doc["step_index"]), SpectralField(basis, coeffs.copy())
