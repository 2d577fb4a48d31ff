"""Serialization: CSV/JSON tables, metadata sidecars, content hashes.

Every data file `foo.csv` (or `foo.json`) gets a sidecar `foo.meta.json`
carrying the experiment-config hash, the git-style blob hash of the MDP spec
or dataset file, and kind-specific metadata.  CSV files are UTF-8 with one
header row, '.' decimals and 17-significant-digit floats, so float64 values
round-trip exactly.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import GridMismatch
from .network import MOMENT_KEYS


def git_blob_sha1(data: bytes) -> str:
    """Hash bytes exactly as `git hash-object` does."""
    h = hashlib.sha1()
    h.update(b"blob %d\x00" % len(data))
    h.update(data)
    return h.hexdigest()


def file_blob_sha1(path: str | Path) -> str:
    return git_blob_sha1(Path(path).read_bytes())


def canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def sha256_of_doc(doc) -> str:
    return hashlib.sha256(canonical_json(doc).encode("utf-8")).hexdigest()


def format_float(x: float) -> str:
    return f"{x:.17g}"


def meta_path(data_path: str | Path) -> Path:
    p = Path(data_path)
    return p.with_name(p.stem + ".meta.json")


def write_meta(data_path: str | Path, meta: dict) -> Path:
    mp = meta_path(data_path)
    mp.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return mp


def read_meta(data_path: str | Path) -> dict:
    return json.loads(meta_path(data_path).read_text(encoding="utf-8"))


def write_table(path: str | Path, columns: list[str], rows: np.ndarray,
                fmt: str = "csv") -> Path:
    """Write a 2-d float table as CSV (default) or JSON."""
    path = Path(path)
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if rows.shape[1] != len(columns):
        raise ValueError(f"{rows.shape[1]} data columns vs {len(columns)} names")
    if fmt == "csv":
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(columns) + "\n")
            for row in rows:
                fh.write(",".join(format_float(x) for x in row) + "\n")
    elif fmt == "json":
        doc = {"columns": columns, "rows": [[float(x) for x in row] for row in rows]}
        path.write_text(json.dumps(doc) + "\n", encoding="utf-8")
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return path


def read_table(path: str | Path):
    """Read a table written by write_table; returns (columns, rows)."""
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text(encoding="utf-8"))
        return list(doc["columns"]), np.asarray(doc["rows"], dtype=np.float64)
    with open(path, "r", encoding="utf-8") as fh:
        columns = fh.readline().strip().split(",")
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return columns, rows


# ---------------------------------------------------------------------------
# record-specific writers

def table_columns(mode: str, n_slices: int | None, pair_labels: list[str]) -> list[str]:
    if mode == "finite":
        return [f"q_j{j}_{lab}" for j in range(n_slices) for lab in pair_labels]
    if mode == "regression":
        return [f"g_{lab}" for lab in pair_labels]
    return [f"q_{lab}" for lab in pair_labels]


def write_train_record(path: str | Path, record, pair_labels: list[str],
                       config_sha: str, spec_sha: str, fmt: str = "csv") -> Path:
    """One run -> one table: t, the flattened output table, then moments."""
    mode = record.config.mode
    snaps = record.snapshots
    if snaps.ndim == 3:
        flat = snaps.reshape(snaps.shape[0], -1)
        n_slices = snaps.shape[1]
    else:
        flat = snaps
        n_slices = None
    cols = (["t"] + table_columns(mode, n_slices, pair_labels)
            + [f"mom_{k}" for k in MOMENT_KEYS])
    rows = np.column_stack([record.times, flat, record.moments])
    path = Path(path)
    write_table(path, cols, rows, fmt)
    params_file = path.with_name(path.stem + "_params.npz")
    np.savez(params_file, c=record.final_params.c, w=record.final_params.w)
    write_meta(path, {
        "kind": "train_record",
        "mode": mode,
        "columns": cols,
        "n_units": record.n_units,
        "seed": record.config.rng_seed,
        "alpha": record.config.alpha,
        "t_end": record.config.t_end,
        "stride": record.config.snapshot_stride,
        "burn_in": record.config.burn_in,
        "activation": record.config.activation,
        "backend": record.backend,
        "n_slices": n_slices,
        "n_pairs": len(pair_labels),
        "params_file": params_file.name,
        "config_sha256": config_sha,
        "spec_sha1": spec_sha,
    })
    return path


def read_train_record(path: str | Path):
    """Returns (meta, times, snapshots, moments) for a serialized run."""
    meta = read_meta(path)
    _, rows = read_table(path)
    times = rows[:, 0]
    n_mom = len(MOMENT_KEYS)
    tables = rows[:, 1:rows.shape[1] - n_mom]
    moments = rows[:, rows.shape[1] - n_mom:]
    if meta.get("n_slices"):
        tables = tables.reshape(tables.shape[0], meta["n_slices"], meta["n_pairs"])
    if not np.all(np.diff(times) > 0):
        raise GridMismatch(f"snapshot times in {path} are not strictly increasing")
    return meta, times, tables, moments


def write_ode_solution(path: str | Path, sol, pair_labels: list[str],
                       config_sha: str, spec_sha: str, fmt: str = "csv",
                       extra_meta: dict | None = None) -> Path:
    values = sol.values
    if values.ndim == 3:
        flat = values.reshape(values.shape[0], -1)
        n_slices = values.shape[1]
    else:
        flat = values
        n_slices = None
    cols = ["t"] + table_columns(sol.mode, n_slices, pair_labels)
    write_table(path, cols, np.column_stack([sol.times, flat]), fmt)
    meta = {
        "kind": "ode_solution",
        "mode": sol.mode,
        "columns": cols,
        "dt": sol.step_size,
        "t_end": float(sol.times[-1]),
        "n_slices": n_slices,
        "n_pairs": len(pair_labels),
        "config_sha256": config_sha,
        "spec_sha1": spec_sha,
    }
    if extra_meta:
        meta.update(extra_meta)
    write_meta(path, meta)
    return Path(path)


def read_ode_solution(path: str | Path):
    meta = read_meta(path)
    _, rows = read_table(path)
    times = rows[:, 0]
    values = rows[:, 1:]
    if meta.get("n_slices"):
        values = values.reshape(values.shape[0], meta["n_slices"], meta["n_pairs"])
    return meta, times, values


def write_kernel(path: str | Path, kt, pair_labels: list[str],
                 config_sha: str, spec_sha: str, fmt: str = "csv") -> Path:
    write_table(path, pair_labels, kt.entries, fmt)
    write_meta(path, {
        "kind": "kernel_matrix",
        "alpha": kt.alpha,
        "method": kt.method,
        "samples": kt.samples,
        "seed": kt.seed,
        "eig_min": kt.eig_min,
        "eig_max": kt.eig_max,
        "stderr_max": None if kt.stderr is None else float(kt.stderr.max()),
        "config_sha256": config_sha,
        "spec_sha1": spec_sha,
    })
    return Path(path)


def read_kernel(path: str | Path):
    from .limit import KernelTensor

    meta = read_meta(path)
    _, rows = read_table(path)
    kt = KernelTensor(alpha=meta["alpha"], entries=rows, method=meta["method"],
                      samples=meta["samples"] or 0, seed=meta["seed"])
    kt.eig_min = meta.get("eig_min")
    kt.eig_max = meta.get("eig_max")
    return meta, kt
