"""JSON and CSV I/O.  Floats are written with 17 significant digits, so
every emitted artifact reloads to the identical in-memory value.

Schemas (all keys required unless noted)::

    space      {"probs": [float, ...]}
    partition  {"labels": [int, ...]}
    filtration {"probs": [...], "levels": [[int, ...], ...]}
    grid       {"probs": [...], "parts": [[[int, ...], ...], ...],   # parts[i][j] labels
                "certifiedF4": bool (optional, re-checked on load)}
    instance   {"grid": grid, "f": [float, ...]}                     # or "X": [[[...]]]
    family     {"probs": [...], "X": [[...]], "U": [[...]], "V": [[...]] (optional)}
"""

from __future__ import annotations

import csv
import io as _io
import json
import math

import numpy as np

from .filtration import Filtration1D, FiltrationGrid
from .mixed import AdaptedFamily
from .prob import FiniteProbSpace, InvalidInput, Partition


def format_float(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return "%.17g" % x


def _encode(obj, out: list[str]) -> None:
    if isinstance(obj, (bool, np.bool_)):
        out.append("true" if obj else "false")
    elif obj is None:
        out.append("null")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(format_float(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, dict):
        out.append("{")
        for k, (key, val) in enumerate(obj.items()):
            if k:
                out.append(", ")
            out.append(json.dumps(str(key)) + ": ")
            _encode(val, out)
        out.append("}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        out.append("[")
        for k, val in enumerate(obj):
            if k:
                out.append(", ")
            _encode(val, out)
        out.append("]")
    else:
        raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps(obj) -> str:
    """JSON text with 17-significant-digit floats."""
    out: list[str] = []
    _encode(obj, out)
    return "".join(out)


def loads(text: str):
    return json.loads(text)


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(obj) + "\n")


def csv_text(header, rows) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v
                    for v in row])
    return buf.getvalue()


# schema converters


def _need(obj, *keys):
    if not isinstance(obj, dict):
        raise InvalidInput("expected a JSON object")
    missing = [k for k in keys if k not in obj]
    if missing:
        raise InvalidInput(f"missing keys: {', '.join(missing)}")


def space_to_json(space: FiniteProbSpace) -> dict:
    return {"probs": space.probs.tolist()}


def space_from_json(obj) -> FiniteProbSpace:
    _need(obj, "probs")
    return FiniteProbSpace(obj["probs"])


def partition_to_json(P: Partition) -> dict:
    return {"labels": P.labels.tolist()}


def partition_from_json(obj) -> Partition:
    _need(obj, "labels")
    return Partition(obj["labels"])


def filtration_to_json(F: Filtration1D) -> dict:
    return {"probs": F.space.probs.tolist(), "levels": [P.labels.tolist() for P in F.parts]}


def filtration_from_json(obj) -> Filtration1D:
    _need(obj, "probs", "levels")
    return Filtration1D(FiniteProbSpace(obj["probs"]), [Partition(l) for l in obj["levels"]])


def grid_to_json(G: FiltrationGrid) -> dict:
    return {"probs": G.space.probs.tolist(),
            "parts": [[P.labels.tolist() for P in row] for row in G.parts],
            "certifiedF4": G.certified_f4}


def grid_from_json(obj, *, certify: bool = False, honor_flag: bool = True) -> FiltrationGrid:
    """A grid marked ``certifiedF4`` is re-checked on load, never trusted;
    ``honor_flag=False`` ignores the mark."""
    _need(obj, "probs", "parts")
    space = FiniteProbSpace(obj["probs"])
    parts = [[Partition(l) for l in row] for row in obj["parts"]]
    certify = certify or (honor_flag and bool(obj.get("certifiedF4", False)))
    return FiltrationGrid(space, parts, certify=certify)


def instance_to_json(G: FiltrationGrid, f=None, X=None, **extra) -> dict:
    out = {"grid": grid_to_json(G)}
    if f is not None:
        out["f"] = np.asarray(f, dtype=float).tolist()
    if X is not None:
        out["X"] = np.asarray(X, dtype=float).tolist()
    out.update(extra)
    return out


def instance_from_json(obj, *, certify: bool = False, honor_flag: bool = True):
    """Returns ``(grid, f, X)``; absent fields are ``None``."""
    _need(obj, "grid")
    G = grid_from_json(obj["grid"], certify=certify, honor_flag=honor_flag)
    f = G.space.check(obj["f"]) if "f" in obj else None
    X = None
    if "X" in obj:
        X = np.asarray(obj["X"], dtype=float)
        if X.shape != G.shape + (G.space.n,):
            raise InvalidInput(f"X has shape {X.shape}, expected {G.shape + (G.space.n,)}")
    return G, f, X


def family_to_json(F: AdaptedFamily) -> dict:
    return {"probs": F.space.probs.tolist(), "X": F.X.tolist(),
            "U": [P.labels.tolist() for P in F.U], "V": [P.labels.tolist() for P in F.V]}


def family_from_json(obj) -> AdaptedFamily:
    _need(obj, "probs", "X", "U")
    space = FiniteProbSpace(obj["probs"])
    V = [Partition(l) for l in obj["V"]] if "V" in obj else None
    return AdaptedFamily(space, obj["X"], [Partition(l) for l in obj["U"]], V)
