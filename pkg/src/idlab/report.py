"""Deterministic artifact writers: CSV reports, JSON manifests, field dumps.

All writes are atomic (temp file in the target directory, then rename).
Floats are serialized with repr (shortest round-trip form), so re-running a
subcommand with the same config byte-reproduces its outputs.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .geometry import Domain, Grid
from .solver import SpaceTimeField
from .util import git_blob_hash


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, tuple):
        return ";".join(_fmt(v) for v in value)
    return str(value)


def write_csv(path: str | Path, fieldnames: list[str], rows: list[dict]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(fieldnames)
    for row in rows:
        writer.writerow([_fmt(row.get(k, "")) for k in fieldnames])
    atomic_write_bytes(path, buf.getvalue().encode("utf-8"))


class _JsonEncoder(json.JSONEncoder):
    def default(self, o):
        if isinstance(o, (np.floating,)):
            return float(o)
        if isinstance(o, (np.integer,)):
            return int(o)
        if isinstance(o, (np.bool_,)):
            return bool(o)
        if isinstance(o, np.ndarray):
            return o.tolist()
        return super().default(o)


def write_json(path: str | Path, obj) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, cls=_JsonEncoder) + "\n"
    atomic_write_bytes(path, text.encode("utf-8"))


def config_manifest(config: dict, extra: dict | None = None) -> dict:
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    out = {
        "config": config,
        "config_hash": git_blob_hash(blob),
    }
    if extra:
        out.update(extra)
    return out


def mark_failed(out_path: str | Path, reason: str) -> None:
    """Leave a FAILED marker next to (partial) artifacts."""
    p = Path(str(out_path) + ".FAILED")
    atomic_write_bytes(p, (reason.rstrip() + "\n").encode("utf-8"))


# ---------------------------------------------------------------------------
# Field binary format: flat little-endian f8 + JSON sidecar
# ---------------------------------------------------------------------------

def save_field(path: str | Path, field: SpaceTimeField) -> None:
    path = Path(path)
    data = np.ascontiguousarray(field.values, dtype="<f8")
    atomic_write_bytes(path, data.tobytes())
    dom = field.grid.domain
    sidecar = {
        "dtype": "<f8",
        "shape": list(data.shape),
        "order": "C",
        "times": field.times.tolist(),
        "axes": [ax.tolist() for ax in field.grid.axes],
        "domain": {
            "dim": dom.dim,
            "xbar": list(dom.xbar),
            "eps0": dom.eps0,
            "T": dom.T,
            "bc_labels": dict(dom.bc_labels),
        },
        "stats": {
            k: v for k, v in field.stats.items() if isinstance(v, (int, float, str))
        },
    }
    write_json(str(path) + ".json", sidecar)


def load_field(path: str | Path) -> SpaceTimeField:
    path = Path(path)
    with open(str(path) + ".json") as fh:
        sidecar = json.load(fh)
    dom_info = sidecar["domain"]
    domain = Domain(
        dim=dom_info["dim"],
        xbar=tuple(dom_info["xbar"]),
        eps0=dom_info["eps0"],
        T=dom_info["T"],
        bc_labels=dom_info.get("bc_labels", {}),
    )
    grid = Grid(domain, tuple(np.asarray(ax, dtype=float) for ax in sidecar["axes"]))
    raw = np.frombuffer(open(path, "rb").read(), dtype=sidecar["dtype"])
    values = raw.reshape(sidecar["shape"]).copy()
    fld = SpaceTimeField(grid, np.asarray(sidecar["times"], dtype=float), values)
    fld.stats.update(sidecar.get("stats", {}))
    return fld


def write_trace_csv(path: str | Path, field: SpaceTimeField) -> None:
    """Gamma_M trace per stored time level: rows (t, x, u)."""
    idx = field.grid.gamma_nodes
    xs = field.grid.nodes[idx, 0]
    rows = []
    for n, t in enumerate(field.times):
        for x, u in zip(xs, field.values[n, idx]):
            rows.append({"t": float(t), "x": float(x), "u": float(u)})
    write_csv(path, ["t", "x", "u"], rows)
