"""Atomic artifact writers: canonical JSON, CSV tables, binary fields.

Everything is written through a temp file in the destination directory
followed by os.replace, so readers never observe a partial artifact.  JSON
is emitted with sorted keys and no timestamps; identical inputs produce
byte-identical files.
"""

import csv
import io
import json
import os
import tempfile

import numpy as np


def _jsonable(obj):
    """Recursively convert numpy containers and scalars to plain Python."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def atomic_write_bytes(path, data):
    path = os.fspath(path)
    dirname = os.path.dirname(path) or "."
    os.makedirs(dirname, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=dirname, prefix=".tmp-artifact-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text):
    return atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, obj):
    """Canonical JSON artifact: sorted keys, two-space indent, newline at end."""
    text = json.dumps(_jsonable(obj), sort_keys=True, indent=2)
    return atomic_write_text(path, text + "\n")


def load_json(path):
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def write_csv(path, header, rows):
    """CSV with a header row; cells formatted via repr-faithful str()."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return atomic_write_text(path, buf.getvalue())


def _cell(v):
    if isinstance(v, (np.floating, np.integer)):
        v = v.item()
    if isinstance(v, float):
        return repr(v)
    return v


def write_field(base, field):
    """Flat binary dump of a solved velocity field plus a JSON sidecar.

    base.bin holds the row-major float64 array with the component axis
    first; base.json describes the layout so the dump is self-contained.
    """
    vel = np.ascontiguousarray(field.velocity(), dtype=np.float64)
    atomic_write_bytes(str(base) + ".bin", vel.tobytes())
    sidecar = {
        "dims": list(vel.shape[1:]),
        "box": field.L,
        "components": int(vel.shape[0]),
        "dtype": "f64",
        "order": "row-major",
    }
    write_json(str(base) + ".json", sidecar)
    return str(base) + ".bin"


def write_solver_log(path, residual_history):
    return write_csv(path, ["iteration", "residual"],
                     list(enumerate(residual_history)))


def write_correlation_csv(path, pc):
    rows = zip(pc.edges[:-1], pc.edges[1:], pc.f2, pc.h2, pc.stderr)
    return write_csv(path, ["r_lo", "r_hi", "f2", "h2", "stderr"], rows)


def write_kernel_csv(path, rs, ks):
    return write_csv(path, ["r", "K"], zip(rs, ks))


def config_artifact(config):
    """ParticleConfig as a serializable dict."""
    return {
        "dim": config.d,
        "box": config.L,
        "gap": config.gap,
        "seed": config.seed,
        "centers": config.centers.tolist(),
    }


def tensor_csv_rows(tensor):
    """Long-format rows (phi, L, i, j, Bij, stderr) for one campaign tensor."""
    phi = tensor.meta.get("phi")
    L = tensor.meta.get("L")
    rows = []
    for i in range(tensor.m):
        for j in range(tensor.m):
            rows.append((phi, L, i, j, tensor.B[i, j], tensor.stderr[i, j]))
    return rows
