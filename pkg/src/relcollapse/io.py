"""Self-describing CSV/JSON outputs and INI run configurations.

Every output embeds the run configuration and a SHA-256 digest of the
canonical (config, payload) pair, so a file can be replayed and checked
byte-for-byte.  Floats are written with ``repr`` (shortest round-trip form).
"""
from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import math
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .core import InvalidInput

SCHEMA_VERSION = 1


def to_plain(obj: Any) -> Any:
    """Recursively convert numpy scalars/arrays, tuples and non-finite floats to JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, complex):
        return {"re": to_plain(obj.real), "im": to_plain(obj.imag)}
    return obj


def canonical_json(obj: Any) -> str:
    return json.dumps(to_plain(obj), sort_keys=True, separators=(",", ":"))


def content_hash(config: Dict, payload: Any) -> str:
    blob = canonical_json({"config": config, "payload": payload}).encode()
    return hashlib.sha256(blob).hexdigest()


def render_json(config: Dict, payload: Any) -> str:
    doc = {"schema": SCHEMA_VERSION, "config": to_plain(config), "payload": to_plain(payload),
           "sha256": content_hash(config, payload)}
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def render_csv(config: Dict, columns: Sequence[str], rows: Sequence[Sequence], summary: Optional[Dict] = None) -> str:
    """CSV with ``#``-prefixed header lines holding the config echo, summary and digest."""
    payload = {"columns": list(columns), "rows": [list(r) for r in rows], "summary": summary or {}}
    buf = io.StringIO()
    buf.write(f"# schema: {SCHEMA_VERSION}\n")
    buf.write(f"# config: {canonical_json(config)}\n")
    if summary:
        buf.write(f"# summary: {canonical_json(summary)}\n")
    buf.write(f"# sha256: {content_hash(config, payload)}\n")
    w = csv.writer(buf, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    return buf.getvalue()


def _cell(v):
    v = to_plain(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (dict, list)):
        return canonical_json(v)
    return v


def read_config_echo(path: str) -> Dict:
    """Config embedded in an output file written by :func:`render_json` or :func:`render_csv`."""
    with open(path) as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        return json.loads(text)["config"]
    for line in text.splitlines():
        if line.startswith("# config: "):
            return json.loads(line[len("# config: "):])
    raise InvalidInput(f"{path}: no embedded config found")


def load_ini(path: str) -> Dict[str, Dict[str, str]]:
    """Sections of an INI file as dicts (keys use underscores)."""
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise InvalidInput(f"cannot read config file {path!r}")
    return {s: {k.replace("-", "_"): v for k, v in cp.items(s)} for s in cp.sections()}


def parse_floats(text: str) -> List[float]:
    try:
        return [float(v) for v in str(text).replace(";", ",").split(",") if v.strip()]
    except ValueError as exc:
        raise InvalidInput(f"expected a comma-separated list of numbers, got {text!r}") from exc
