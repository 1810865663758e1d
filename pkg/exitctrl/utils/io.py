"""Canonical JSON, content digests and table output"""
import hashlib
import json
import math
from pathlib import Path
from typing import Any, Union

import numpy as np
import pandas as pd

from exitctrl.exceptions import ConfigError, SchemaError


def to_jsonable(value: Any) -> Any:
    """Convert numpy scalars/arrays and tuples into plain JSON values"""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        # JSON has no inf/nan; keep them visible as strings
        return value if math.isfinite(value) else str(value)
    return value


def canonical_json(doc: Any) -> str:
    """
    Serialize with sorted keys and shortest round-trip number form.

    Args:
        doc: JSON-compatible document (numpy values allowed)

    Returns:
        Canonical JSON text
    """
    return json.dumps(to_jsonable(doc), sort_keys=True, separators=(",", ":"), allow_nan=False)


def content_digest(doc: Any) -> str:
    return hashlib.sha256(canonical_json(doc).encode("utf-8")).hexdigest()


def read_json(path: Union[str, Path]) -> Any:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"file not found: {path}", str(path))
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON at line {exc.lineno}: {exc.msg}", str(path)) from exc


def write_json(path: Union[str, Path], doc: Any, pretty: bool = True) -> Path:
    """Write a document with sorted keys; byte-identical for identical input"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(to_jsonable(doc), sort_keys=True, indent=2 if pretty else None, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def write_frame(path: Union[str, Path], frame: pd.DataFrame) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g")
    return path
