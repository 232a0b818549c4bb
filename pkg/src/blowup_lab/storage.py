"""Columnar persistence: a JSON header plus a raw little-endian float64 payload."""
import hashlib
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class PersistError(RuntimeError):
    pass


def _paths(path):
    path = Path(path)
    return path.with_suffix(".json"), path.with_suffix(".f64")


def save_arrays(path, kind, arrays, meta):
    hdr_path, bin_path = _paths(path)
    hdr_path.parent.mkdir(parents=True, exist_ok=True)
    columns, chunks, offset = [], [], 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(np.asarray(arrays[name], dtype="<f8"))
        columns.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += a.size
    payload = b"".join(chunks)
    header = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "columns": columns,
        "sha256": hashlib.sha256(payload).hexdigest(),
        "meta": meta,
    }
    bin_path.write_bytes(payload)
    hdr_path.write_text(json.dumps(header, indent=1, sort_keys=True))
    return header["sha256"]


def load_arrays(path, kind):
    hdr_path, bin_path = _paths(path)
    if not hdr_path.exists() or not bin_path.exists():
        raise PersistError(f"missing files for {path}")
    header = json.loads(hdr_path.read_text())
    if header.get("format_version") != FORMAT_VERSION:
        raise PersistError(f"format version {header.get('format_version')} != {FORMAT_VERSION}")
    if header.get("kind") != kind:
        raise PersistError(f"expected a {kind} file, found {header.get('kind')}")
    payload = bin_path.read_bytes()
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise PersistError("checksum mismatch: payload is corrupted")
    flat = np.frombuffer(payload, dtype="<f8")
    out = {}
    for col in header["columns"]:
        n = int(np.prod(col["shape"])) if col["shape"] else 1
        out[col["name"]] = flat[col["offset"]:col["offset"] + n].reshape(col["shape"]).copy()
    return out, header


def save_table(table, path):
    arrays = {
        "R": table.R, "R_weights": table.grid_R.weights,
        "xi": table.xis, "xi_weights": table.grid_xi.weights,
        "u": table.grid_xi.u, "h": np.array([table.grid_xi.h]),
        "phi": table.phi, "rho": table.rho, "phi_d": table.phi_d, "phi0": table.phi0,
        "amp": table.amp, "phase": table.phase, "xi_d": np.array([table.xi_d]),
        "eq_residuals": table.diagnostics["eq_residuals"],
        "fit_residuals": table.diagnostics["fit_residuals"],
    }
    diag = {k: float(v) for k, v in table.diagnostics.items() if np.ndim(v) == 0}
    meta = {"config": asdict(table.config), "key": table.key, "diagnostics": diag}
    return save_arrays(path, "spectral_table", arrays, meta)


def load_table(path):
    from .spectral import FreqGrid, RadialGrid, SpectralTable, TableConfig
    a, header = load_arrays(path, "spectral_table")
    cfg = TableConfig(**header["meta"]["config"])
    grid = RadialGrid(float(a["R"][-1]), a["R"], a["R_weights"])
    fg = FreqGrid(a["xi"], a["u"], float(a["h"][0]), a["xi_weights"])
    diag = dict(header["meta"]["diagnostics"])
    diag["eq_residuals"] = a["eq_residuals"]
    diag["fit_residuals"] = a["fit_residuals"]
    t = SpectralTable(cfg, grid, fg, float(a["xi_d"][0]), a["phi_d"], a["phi"], a["rho"],
                      a["phi0"], a["amp"], a["phase"], diag)
    validate_table(t)
    return t


def validate_table(t):
    if t.config.potential_on:
        if not t.xi_d < 0:
            raise PersistError("invariant violated: xi_d must be negative")
        nrm = t.grid_R.inner(t.phi_d, t.phi_d)
        if abs(nrm - 1) > 1e-8:
            raise PersistError(f"invariant violated: <phi_d, phi_d> = {nrm}")
        if t.phi_d[0] != 0:
            raise PersistError("invariant violated: phi_d(0) != 0")
    if not np.all(t.rho > 0):
        raise PersistError("invariant violated: rho must be positive")
    if not np.all(np.isfinite(t.phi)):
        raise PersistError("invariant violated: non-finite eigenfunction samples")


def save_transference(tm, path):
    arrays = {"Ac": tm.Ac, "Kcc": tm.Kcc, "Kcd": tm.Kcd, "Kdc": tm.Kdc,
              "Kdd": np.array([tm.Kdd]), "F": tm.F, "ell": tm.ell}
    diag = {k: float(v) for k, v in tm.diagnostics.items() if np.ndim(v) == 0}
    return save_arrays(path, "transference", arrays, {"key": tm.key, "diagnostics": diag})


def load_transference(path, table=None):
    from .transference import TransferenceMatrices
    a, header = load_arrays(path, "transference")
    key = header["meta"]["key"]
    if table is not None and key != table.key:
        raise PersistError(f"matrices belong to table {key}, not {table.key}")
    n = a["Ac"].shape[0]
    if a["Kcc"].shape != (n, n) or a["Kcd"].shape != (n,) or a["Kdc"].shape != (n,):
        raise PersistError("invariant violated: inconsistent matrix shapes")
    return TransferenceMatrices(key, a["Ac"], a["Kcc"], a["Kcd"], a["Kdc"], float(a["Kdd"][0]),
                                a["F"], a["ell"], dict(header["meta"]["diagnostics"]))


def persist_load(obj, path):
    """Save a table or matrix set, reload it and confirm the arrays came back bit-exact."""
    from .spectral import SpectralTable
    if isinstance(obj, SpectralTable):
        save_table(obj, path)
        back = load_table(path)
        pairs = [(obj.phi, back.phi), (obj.rho, back.rho), (obj.phi_d, back.phi_d)]
    else:
        save_transference(obj, path)
        back = load_transference(path)
        pairs = [(obj.Kcc, back.Kcc), (obj.Ac, back.Ac), (obj.Kcd, back.Kcd)]
    if not all(np.array_equal(a, b) for a, b in pairs):
        raise PersistError("roundtrip is not bit-exact")
    return back
