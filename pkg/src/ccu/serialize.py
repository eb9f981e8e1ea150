"""Versioned text model files.

The format is line oriented and self-describing; every float is written
with 17 significant digits so a save/load/save round trip is byte
identical.  A 64-bit FNV-1a fingerprint over the canonical parameter lines
is stored in the file and re-verified on load.

Layout (one block per component)::

    ccu-model 1
    meta <key> <value...>          # zero or more, preserved verbatim
    prior-odds <float>
    classes <int>
    metric <dim>
    eigenvalues <d floats>
    eigenrow <d floats>            # d rows of the eigenvector matrix
    mixture in <K>
    centroid <d floats>            # K rows
    scales <K floats>
    mixture out <K>
    ...
    classifier <n_layers> <widths...>
    weightrow <floats>             # per layer: out rows, then one bias line
    bias <floats>
    fingerprint <16 hex digits>
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classifier import ReluClassifier
from .density import GaussianMixture
from .metric import MetricTransform
from .model import CcuModel

__all__ = ["FORMAT_VERSION", "LoadedModel", "fnv1a64", "model_fingerprint",
           "save_model", "load_model", "ModelFileError"]

FORMAT_VERSION = 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


class ModelFileError(ValueError):
    """Malformed, truncated, or corrupted model file."""


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _vec(v: np.ndarray) -> str:
    return " ".join(_fmt(x) for x in np.asarray(v, dtype=float))


def _param_lines(model: CcuModel) -> list[str]:
    lines = [f"prior-odds {_fmt(model.prior_odds)}", f"classes {model.n_classes}"]
    t = model.metric
    lines.append(f"metric {t.dim}")
    lines.append(f"eigenvalues {_vec(t.eigenvalues)}")
    for row in t.eigenvectors:
        lines.append(f"eigenrow {_vec(row)}")
    for tag, gmm in (("in", model.in_mixture), ("out", model.out_mixture)):
        lines.append(f"mixture {tag} {gmm.n_components}")
        for c in gmm.centroids:
            lines.append(f"centroid {_vec(c)}")
        lines.append(f"scales {_vec(gmm.scales)}")
    clf = model.classifier
    widths = " ".join(str(w) for w in clf.widths)
    lines.append(f"classifier {len(clf.weights)} {widths}")
    for w, b in zip(clf.weights, clf.biases):
        for row in w:
            lines.append(f"weightrow {_vec(row)}")
        lines.append(f"bias {_vec(b)}")
    return lines


def model_fingerprint(model: CcuModel) -> str:
    """16-hex-digit FNV-1a hash of the canonical parameter text."""
    payload = ("\n".join(_param_lines(model)) + "\n").encode()
    return format(fnv1a64(payload), "016x")


@dataclass
class LoadedModel:
    model: CcuModel
    metadata: dict[str, str] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION
    fingerprint: str = ""


def save_model(path: str, model: CcuModel, metadata: dict[str, str] | None = None) -> str:
    """Write the model file; returns its fingerprint."""
    params = _param_lines(model)
    for line in params:
        if "nan" in line or "inf" in line:
            raise ValueError("refusing to serialize non-finite parameters")
    fp = format(fnv1a64(("\n".join(params) + "\n").encode()), "016x")
    out = [f"ccu-model {FORMAT_VERSION}"]
    for key, value in (metadata or {}).items():
        if any(ch in key for ch in " \n"):
            raise ValueError("metadata keys must be single tokens")
        if "\n" in str(value):
            raise ValueError("metadata values must be single lines")
        out.append(f"meta {key} {value}")
    out.extend(params)
    out.append(f"fingerprint {fp}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(out) + "\n")
    return fp


class _Cursor:
    def __init__(self, lines: list[str]):
        self.lines = lines
        self.pos = 0

    def next(self, expect: str) -> list[str]:
        if self.pos >= len(self.lines):
            raise ModelFileError(f"truncated file: expected '{expect}' line")
        parts = self.lines[self.pos].split()
        if not parts or parts[0] != expect:
            raise ModelFileError(
                f"line {self.pos + 1}: expected '{expect}', got '{self.lines[self.pos]}'"
            )
        self.pos += 1
        return parts[1:]

    def peek(self) -> str:
        return self.lines[self.pos].split()[0] if self.pos < len(self.lines) else ""


def load_model(path: str) -> LoadedModel:
    """Parse and fingerprint-verify a model file."""
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    cur = _Cursor(lines)

    header = cur.next("ccu-model")
    version = int(header[0])
    if version != FORMAT_VERSION:
        raise ModelFileError(f"unsupported format version {version}")
    metadata: dict[str, str] = {}
    while cur.peek() == "meta":
        parts = cur.next("meta")
        metadata[parts[0]] = " ".join(parts[1:])

    param_start = cur.pos
    prior_odds = float(cur.next("prior-odds")[0])
    n_classes = int(cur.next("classes")[0])
    dim = int(cur.next("metric")[0])
    eigenvalues = np.array([float(x) for x in cur.next("eigenvalues")])
    if eigenvalues.shape != (dim,):
        raise ModelFileError("eigenvalue count does not match dimension")
    rows = [np.array([float(x) for x in cur.next("eigenrow")]) for _ in range(dim)]
    metric = MetricTransform(np.vstack(rows), eigenvalues, float(np.log(eigenvalues).sum()), dim)

    mixtures = {}
    for tag in ("in", "out"):
        head = cur.next("mixture")
        if head[0] != tag:
            raise ModelFileError(f"expected mixture '{tag}' block")
        k = int(head[1])
        cents = np.vstack([[float(x) for x in cur.next("centroid")] for _ in range(k)])
        scales = np.array([float(x) for x in cur.next("scales")])
        if scales.shape != (k,):
            raise ModelFileError("scale count does not match component count")
        mixtures[tag] = GaussianMixture(cents, scales, metric)

    head = cur.next("classifier")
    n_layers = int(head[0])
    widths = [int(x) for x in head[1:]]
    if len(widths) != n_layers + 1:
        raise ModelFileError("classifier widths do not match layer count")
    weights, biases = [], []
    for fan_in, fan_out in zip(widths, widths[1:]):
        w = np.vstack([[float(x) for x in cur.next("weightrow")] for _ in range(fan_out)])
        if w.shape != (fan_out, fan_in):
            raise ModelFileError("weight row length does not match widths")
        weights.append(w)
        biases.append(np.array([float(x) for x in cur.next("bias")]))
    param_end = cur.pos

    stored_fp = cur.next("fingerprint")[0]
    payload = ("\n".join(lines[param_start:param_end]) + "\n").encode()
    actual_fp = format(fnv1a64(payload), "016x")
    if actual_fp != stored_fp:
        raise ModelFileError(
            f"fingerprint mismatch: file says {stored_fp}, parameters hash to {actual_fp}"
        )

    model = CcuModel(
        ReluClassifier(weights, biases), mixtures["in"], mixtures["out"],
        prior_odds, n_classes,
    )
    return LoadedModel(model, metadata, version, stored_fp)
