"""Row-major JSON encoding of matrices shared by every serializable type."""
import hashlib
import json

import numpy as np


def mat_to_json(a):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    return {"rows": a.shape[0], "cols": a.shape[1], "data": [float(v) for v in a.ravel()]}


def mat_from_json(d):
    return np.asarray(d["data"], dtype=float).reshape(d["rows"], d["cols"])


def dumps(obj):
    """Deterministic JSON text (sorted keys, repr floats)."""
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=True)


def write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(dumps(obj))
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def array_digest(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(np.asarray(a, dtype=float))
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()[:16]
