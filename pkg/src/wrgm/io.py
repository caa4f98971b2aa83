"""File formats: JSON-lines chains, canonical JSON, and CSV exports.

Canonical JSON sorts keys and prints floats with 17 significant digits, so a
chain file that is read and written again is byte-identical.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .errors import DataError
from .sampler import Chain, ChainSample


def fmt_float(x):
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def dumps_canonical(obj):
    if isinstance(obj, dict):
        items = sorted((str(k), v) for k, v in obj.items())
        return "{" + ",".join(json.dumps(k) + ":" + dumps_canonical(v) for k, v in items) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(dumps_canonical(v) for v in obj) + "]"
    if isinstance(obj, np.ndarray):
        return dumps_canonical(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(obj)
    if obj is None:
        return "null"
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def lower_tri(cov):
    cov = np.asarray(cov)
    return cov[np.tril_indices(cov.shape[0])].tolist()


def from_lower_tri(entries, p):
    out = np.zeros((p, p))
    out[np.tril_indices(p)] = entries
    return out + np.tril(out, -1).T


def sample_record(s: ChainSample):
    return {
        "sweep": int(s.sweep),
        "t": int(s.t),
        "weights": np.asarray(s.weights, float).tolist(),
        "means": np.asarray(s.means, float).tolist(),
        "covariances": [lower_tri(c) for c in s.covs],
        "assignments": np.asarray(s.assignments, int).tolist(),
        "log_joint": float(s.log_joint),
    }


def record_sample(rec):
    means = np.asarray(rec["means"], dtype=float)
    p = means.shape[1]
    return ChainSample(
        sweep=int(rec["sweep"]),
        t=int(rec["t"]),
        weights=np.asarray(rec["weights"], dtype=float),
        means=means,
        covs=np.array([from_lower_tri(c, p) for c in rec["covariances"]]),
        assignments=np.asarray(rec["assignments"], dtype=np.int64),
        log_joint=float(rec["log_joint"]),
    )


def write_chain(path, chain):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in chain.samples:
            fh.write(dumps_canonical(sample_record(s)))
            fh.write("\n")


def _loads(line):
    # integers are read as floats so "-0" style tokens survive a round trip
    return json.loads(line, parse_int=float)


def read_chain_records(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(_loads(line))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from None
    return out


def read_chain(path, meta_path=None):
    recs = read_chain_records(path)
    try:
        samples = [record_sample(r) for r in recs]
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"{path}: malformed chain record: {exc}") from None
    meta = {}
    if meta_path is not None and Path(meta_path).exists():
        meta = json.loads(Path(meta_path).read_text(encoding="utf-8"))
    return Chain(samples=samples, meta=meta)


def rewrite_chain_text(path):
    """Canonical re-serialization of an existing chain file (round-trip check)."""
    return "".join(dumps_canonical(r) + "\n" for r in read_chain_records(path))


def write_json(path, obj):
    Path(path).write_text(dumps_canonical(obj) + "\n", encoding="utf-8")


def write_meta(path, meta):
    Path(path).write_text(json.dumps(_plain(meta), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        obj = float(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(
                fmt_float(v) if isinstance(v, (float, np.floating)) else str(v) for v in r
            ) + "\n")
