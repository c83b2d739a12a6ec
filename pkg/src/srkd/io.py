"""File formats: embedding binaries, JSON-lines metric logs, strict config files, run manifests."""
from __future__ import annotations

import hashlib
import json
import math
import platform
import struct
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

MAGIC = b"RKDE"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQIB")  # magic, version, count, dim, label flag


class FormatError(ValueError):
    """Malformed or truncated embedding file."""


class ConfigFileError(ValueError):
    """Unreadable config file or unknown key."""


# --------------------------------------------------------------------------- embeddings

def encode_embeddings(values, labels=None) -> bytes:
    v = np.asarray(values)
    if v.ndim != 2:
        raise FormatError(f"embeddings must be 2-D, got shape {v.shape}")
    count, dim = v.shape
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, count, dim, 0 if labels is None else 1)
    body = np.ascontiguousarray(v, dtype="<f4").tobytes()
    if labels is None:
        return header + body
    lab = np.asarray(labels)
    if lab.shape != (count,):
        raise FormatError(f"expected {count} labels, got shape {lab.shape}")
    if lab.size and lab.min() < 0:
        raise FormatError("labels must be non-negative")
    return header + body + np.ascontiguousarray(lab, dtype="<u4").tobytes()


def decode_embeddings(data: bytes):
    """Parse an embedding file; returns ``(values float32 [count, dim], labels uint32 or None)``."""
    if len(data) < _HEADER.size:
        raise FormatError(f"file too short for header ({len(data)} < {_HEADER.size} bytes)")
    magic, version, count, dim, has_labels = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    if has_labels not in (0, 1):
        raise FormatError(f"bad label flag {has_labels}")
    expected = _HEADER.size + 4 * count * dim + (4 * count if has_labels else 0)
    if len(data) != expected:
        raise FormatError(f"length mismatch: header implies {expected} bytes, file has {len(data)}")
    off = _HEADER.size
    values = np.frombuffer(data, dtype="<f4", count=count * dim, offset=off).reshape(count, dim)
    labels = None
    if has_labels:
        labels = np.frombuffer(data, dtype="<u4", count=count, offset=off + 4 * count * dim)
    return values.astype(np.float32), None if labels is None else labels.astype(np.uint32)


def write_embeddings(path, values, labels=None) -> None:
    Path(path).write_bytes(encode_embeddings(values, labels))


def read_embeddings(path):
    return decode_embeddings(Path(path).read_bytes())


# --------------------------------------------------------------------------- JSON-lines

def _fmt_number(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot serialize non-finite number {x}")
    s = "%.17g" % x
    if not any(ch in s for ch in ".en"):
        s += ".0"
    return s


def dumps_exact(obj) -> str:
    """Compact JSON with 17-significant-digit floats and insertion-ordered keys."""
    if obj is None:
        return "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return "{" + ",".join(f"{json.dumps(str(k))}:{dumps_exact(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(dumps_exact(v) for v in obj) + "]"
    return _fmt_number(obj)


class MetricLogWriter:
    def __init__(self, path):
        self.path = Path(path)
        self._fh = self.path.open("w", encoding="utf-8", newline="\n")

    def __call__(self, record: dict) -> None:
        self._fh.write(dumps_exact(record) + "\n")

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metric_log(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


# --------------------------------------------------------------------------- config

SECTIONS = ("train", "corpus", "teacher")


def flatten(table: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in table.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def load_config_file(path) -> dict:
    """Read a TOML file of dotted keys into a flat ``{"section.key": value}`` dict."""
    try:
        with open(path, "rb") as fh:
            table = tomllib.load(fh)
    except OSError as exc:
        raise ConfigFileError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigFileError(f"cannot parse config {path}: {exc}") from exc
    return flatten(table)


def split_sections(flat: dict, allowed: dict[str, set], default: str = "train") -> dict[str, dict]:
    """Group flat keys by section, rejecting any key not in ``allowed``. Bare keys go to ``default``."""
    out = {s: {} for s in allowed}
    for key, value in flat.items():
        section, _, name = key.rpartition(".") if "." in key else (default, "", key)
        if section not in allowed or name not in allowed[section]:
            raise ConfigFileError(f"unknown config key {key!r}")
        out[section][name] = value
    return out


def dataclass_keys(cls) -> set:
    return {f.name for f in fields(cls)}


# --------------------------------------------------------------------------- manifests

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def platform_fingerprint(backend: str) -> dict:
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "machine": platform.machine(),
        "system": platform.system(),
        "byteorder": sys.byteorder,
        "kernel_backend": backend,
    }


def write_json(path, obj) -> None:
    Path(path).write_text(dumps_exact(obj) + "\n", encoding="utf-8")
