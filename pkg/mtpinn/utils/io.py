import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Union

import pandas as pd

# Fixed float rendering keeps reruns byte-identical
CSV_FLOAT_FORMAT = "%.12g"
# Enough digits for a float64 to read back bit for bit
EXACT_FLOAT_FORMAT = "%.17g"


def atomic_write_text(path: Union[str, Path], text: str) -> Path:
    """Write text to ``path`` via a temporary file and an atomic rename"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def write_json(path: Union[str, Path], payload: Any) -> Path:
    text = json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False, allow_nan=True)
    return atomic_write_text(path, text + "\n")


def write_csv(path: Union[str, Path], frame: pd.DataFrame, float_format: str = CSV_FLOAT_FORMAT) -> Path:
    text = frame.to_csv(index=False, float_format=float_format, lineterminator="\n")
    return atomic_write_text(path, text)


def file_sha256(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()
