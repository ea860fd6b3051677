"""Portable file formats: model bundles, datasets, verification reports.

Everything is JSON written in one canonical layout: sorted keys, floats with
17 significant digits, complex numbers as ``[re, im]`` pairs, and numeric
arrays on a single line. Writes go through a temporary file and a rename, so
a reader never sees a half-written file. Paths inside a manifest are relative
to the manifest's directory.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from .attack import ENCODINGS, encode
from .bounds import INFINITE, is_infinite
from .channel import NoiseSpec
from .classifier import Classifier, Povm
from .errors import DatasetError, InvalidNoise, InvalidPovm, ManifestError, QroverError
from .qasm import CircuitIR, emit_qasm, parse_qasm
from .qcore import DensityMatrix, fidelity
from .verify import DatasetItem, ItemResult, LabeledDataset, VerificationReport

SCHEMA = "qrover/1"
ITEM_KINDS = ("density", "pure", "features")


# --------------------------------------------------------------------------
# Canonical text

def _scalar(x) -> str:
    if x is None:
        return "null"
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not math.isfinite(x):
            raise ValueError(f"cannot serialise non-finite number {x!r}")
        if x == 0:
            return "0.0"
        text = format(x, ".17g")
        return text if any(c in text for c in ".en") else text + ".0"
    if isinstance(x, str):
        return json.dumps(x, ensure_ascii=False)
    raise TypeError(f"cannot serialise {type(x).__name__}")


def _is_flat(x) -> bool:
    if isinstance(x, dict):
        return False
    if isinstance(x, (list, tuple)):
        return all(_is_flat(v) for v in x)
    return True


def _render(x, level: int) -> str:
    pad = "  " * (level + 1)
    end = "  " * level
    if isinstance(x, dict):
        if not x:
            return "{}"
        body = ",\n".join(f"{pad}{json.dumps(str(k), ensure_ascii=False)}: {_render(x[k], level + 1)}"
                          for k in sorted(x))
        return "{\n" + body + "\n" + end + "}"
    if isinstance(x, (list, tuple)):
        if _is_flat(x):
            return "[" + ", ".join(_render(v, level) for v in x) + "]"
        return "[\n" + ",\n".join(pad + _render(v, level + 1) for v in x) + "\n" + end + "]"
    return _scalar(x)


def dumps(obj) -> str:
    """Canonical JSON text (trailing newline included)."""
    return _render(obj, 0) + "\n"


def atomic_write(path, text: str):
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    directory.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj):
    atomic_write(path, dumps(obj))


def read_json(path, error=ManifestError) -> Any:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise error(f"{path}: file not found") from None
    except (OSError, UnicodeDecodeError) as exc:
        raise error(f"{path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise error(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None


# --------------------------------------------------------------------------
# Complex arrays

def complex_to_json(m) -> list:
    a = np.asarray(m, dtype=complex)
    if a.ndim == 0:
        return [float(a.real), float(a.imag)]
    return [complex_to_json(row) for row in a]


def complex_from_json(data, error=DatasetError) -> np.ndarray:
    try:
        a = np.asarray(data, dtype=float)
    except (TypeError, ValueError):
        raise error("complex array must be nested [re, im] pairs") from None
    if a.ndim < 1 or a.shape[-1] != 2:
        raise error("complex array must be nested [re, im] pairs")
    if not np.all(np.isfinite(a)):
        raise error("complex array has non-finite entries")
    return a[..., 0] + 1j * a[..., 1]


def _require(d: dict, key: str, error, where: str):
    if not isinstance(d, dict) or key not in d:
        raise error(f"{where}: missing field {key!r}")
    return d[key]


def _check_schema(d, error, where):
    if not isinstance(d, dict):
        raise error(f"{where}: top level must be an object")
    if d.get("schema_version") != SCHEMA:
        raise error(f"{where}: schema_version must be {SCHEMA!r}, got {d.get('schema_version')!r}")


# --------------------------------------------------------------------------
# Noise

def noise_to_json(noise: Optional[NoiseSpec], materialized: bool = False) -> Optional[dict]:
    if noise is None:
        return None
    out = {"kind": noise.kind, "p": float(noise.p), "placement": noise.placement, "seed": int(noise.seed),
           "materialized": bool(materialized)}
    if noise.custom_kraus is not None:
        out["kraus"] = [complex_to_json(k) for k in noise.custom_kraus]
    return out


def noise_from_json(d) -> tuple[Optional[NoiseSpec], bool]:
    if d is None:
        return None, False
    if not isinstance(d, dict):
        raise ManifestError("noise must be an object or null")
    try:
        kraus = d.get("kraus")
        ops = tuple(complex_from_json(k, ManifestError) for k in kraus) if kraus is not None else None
        spec = NoiseSpec(kind=str(_require(d, "kind", ManifestError, "noise")), p=float(d.get("p", 0.0)),
                         placement=str(d.get("placement", "end")), seed=int(d.get("seed", 0)),
                         custom_kraus=ops)
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"noise: {exc}") from None
    return spec, bool(d.get("materialized", False))


# --------------------------------------------------------------------------
# Model bundles

@dataclass
class ModelBundle:
    """A circuit, its readout POVM and optional noise; compiles to a :class:`Classifier`.

    ``noise_materialized`` marks noise already present as markers in the
    circuit (it is then recorded in the manifest but not applied again).
    """

    circuit: CircuitIR
    povm: Povm
    noise: Optional[NoiseSpec] = None
    noise_materialized: bool = False
    metadata: dict = field(default_factory=dict)

    def classifier(self) -> Classifier:
        noise = None if self.noise_materialized else self.noise
        return Classifier.from_circuit(self.circuit, self.povm, noise)


def save_model(path, bundle: ModelBundle, qasm_name: Optional[str] = None):
    """Write ``<path>`` (manifest) and the QASM file next to it."""
    path = Path(path)
    qasm_name = qasm_name or path.with_suffix(".qasm").name
    atomic_write(path.parent / qasm_name, emit_qasm(bundle.circuit))
    write_json(path, {
        "schema_version": SCHEMA,
        "qasm_path": qasm_name,
        "povm": [{"label": l, "matrix": complex_to_json(m)} for l, m in zip(bundle.povm.labels, bundle.povm.elements)],
        "noise": noise_to_json(bundle.noise, bundle.noise_materialized),
        "metadata": bundle.metadata,
    })


def load_bundle(path) -> ModelBundle:
    path = Path(path)
    d = read_json(path, ManifestError)
    _check_schema(d, ManifestError, str(path))
    qasm_rel = _require(d, "qasm_path", ManifestError, str(path))
    if not isinstance(qasm_rel, str) or Path(qasm_rel).is_absolute():
        raise ManifestError(f"{path}: qasm_path must be a relative path")
    qasm_file = path.parent / qasm_rel
    try:
        source = qasm_file.read_bytes()
    except OSError as exc:
        raise ManifestError(f"{path}: cannot read QASM file {qasm_rel!r} ({exc.strerror})") from None
    circ = parse_qasm(source)
    entries = _require(d, "povm", ManifestError, str(path))
    if not isinstance(entries, list) or not entries:
        raise ManifestError(f"{path}: povm must be a non-empty list")
    labels, mats = [], []
    for e in entries:
        labels.append(str(_require(e, "label", ManifestError, "povm entry")))
        mats.append(complex_from_json(_require(e, "matrix", ManifestError, "povm entry"), InvalidPovm))
    if any(m.ndim != 2 for m in mats):
        raise InvalidPovm("POVM elements must be matrices")
    povm = Povm(labels, mats)
    if povm.dim != 2 ** circ.n_qubits:
        raise InvalidPovm(f"POVM dimension {povm.dim} does not match the {circ.n_qubits}-qubit circuit")
    try:
        noise, materialized = noise_from_json(d.get("noise"))
    except InvalidNoise as exc:
        raise ManifestError(f"{path}: {exc}") from None
    meta = d.get("metadata") or {}
    if not isinstance(meta, dict):
        raise ManifestError(f"{path}: metadata must be an object")
    return ModelBundle(circ, povm, noise, materialized, meta)


def load_model(path) -> Classifier:
    return load_bundle(path).classifier()


# --------------------------------------------------------------------------
# Datasets

def dataset_to_json(data: LabeledDataset, n_qubits: Optional[int] = None, weights=None, sources=None) -> dict:
    labels = list(data.labels) if data.labels is not None else sorted({str(it.label) for it in data})
    encodings = {it.features.encoding for it in data if it.features is not None}
    use_features = bool(data.items) and all(it.features is not None for it in data) and len(encodings) == 1
    items = []
    for k, it in enumerate(data):
        entry = {"label": labels[it.label]}
        if use_features:
            entry["kind"] = "features"
            entry["payload"] = [float(v) for v in it.features.features]
        else:
            entry["kind"] = "density"
            entry["payload"] = complex_to_json(it.state.matrix)
        if weights is not None:
            entry["weight"] = float(weights[k])
        if sources is not None:
            entry["source_index"] = int(sources[k])
        items.append(entry)
    n = n_qubits
    if n is None and data.items:
        n = data[0].state.n_qubits
    return {
        "schema_version": SCHEMA,
        "name": data.name,
        "labels": labels,
        "n_qubits": n,
        "encoding": next(iter(encodings)) if use_features else None,
        "items": items,
    }


def save_dataset(path, data: LabeledDataset, **kw):
    write_json(path, dataset_to_json(data, **kw))


@dataclass
class LoadedDataset:
    data: LabeledDataset
    weights: list[float]
    sources: list[Optional[int]]
    encoding: Optional[str]
    n_qubits: Optional[int]


def dataset_from_json(d, where: str = "dataset") -> LoadedDataset:
    _check_schema(d, DatasetError, where)
    raw_items = _require(d, "items", DatasetError, where)
    if not isinstance(raw_items, list):
        raise DatasetError(f"{where}: items must be a list")
    labels = d.get("labels")
    if labels is None:
        labels = sorted({str(_require(it, "label", DatasetError, where)) for it in raw_items})
    labels = [str(l) for l in labels]
    n_qubits = d.get("n_qubits")
    encoding = d.get("encoding")
    if encoding is not None and encoding not in ENCODINGS:
        raise DatasetError(f"{where}: unknown encoding {encoding!r}")
    items, weights, sources = [], [], []
    for k, it in enumerate(raw_items):
        ctx = f"{where}: item {k}"
        kind = _require(it, "kind", DatasetError, ctx)
        payload = _require(it, "payload", DatasetError, ctx)
        label = str(_require(it, "label", DatasetError, ctx))
        if label not in labels:
            raise DatasetError(f"{ctx}: label {label!r} not among {labels}")
        try:
            if kind == "density":
                m = complex_from_json(payload)
                if m.ndim != 2:
                    raise DatasetError(f"{ctx}: density payload must be a matrix")
                x = DensityMatrix(m)
            elif kind == "pure":
                v = complex_from_json(payload)
                if v.ndim != 1:
                    raise DatasetError(f"{ctx}: pure payload must be a vector")
                x = DensityMatrix.from_pure(v)
            elif kind == "features":
                if encoding is None or n_qubits is None:
                    raise DatasetError(f"{ctx}: feature items need encoding and n_qubits")
                x = encode(np.asarray(payload, dtype=float), int(n_qubits), encoding)
            else:
                raise DatasetError(f"{ctx}: kind must be one of {ITEM_KINDS}, got {kind!r}")
        except DatasetError:
            raise
        except (QroverError, TypeError, ValueError) as exc:
            raise DatasetError(f"{ctx}: {exc}") from None
        state = x.state if kind == "features" else x
        if n_qubits is not None and state.dim != 2 ** int(n_qubits):
            raise DatasetError(f"{ctx}: dimension {state.dim} does not match n_qubits={n_qubits}")
        items.append((x, labels.index(label)))
        w = it.get("weight", 1.0)
        if not (isinstance(w, (int, float)) and math.isfinite(w) and w > 0):
            raise DatasetError(f"{ctx}: weight must be a positive number")
        weights.append(float(w))
        sources.append(it.get("source_index"))
    dims = {(x.state if hasattr(x, "features") else x).dim for x, _ in items}
    if len(dims) > 1:
        raise DatasetError(f"{where}: items have mixed dimensions {sorted(dims)}")
    data = LabeledDataset(items, name=str(d.get("name", "dataset")), labels=labels)
    return LoadedDataset(data, weights, sources, encoding, None if n_qubits is None else int(n_qubits))


def load_dataset_file(path) -> LoadedDataset:
    return dataset_from_json(read_json(path, DatasetError), str(path))


def load_dataset(path) -> LabeledDataset:
    return load_dataset_file(path).data


def align_labels(data: LabeledDataset, labels: Sequence[str]) -> LabeledDataset:
    """Re-index ``data`` against a classifier's label order."""
    if data.labels is None:
        return data
    labels = list(labels)
    mapping = {}
    for k, name in enumerate(data.labels):
        if name in labels:
            mapping[k] = labels.index(name)
    items = []
    for i, it in enumerate(data):
        if it.label not in mapping:
            raise DatasetError(f"item {i} has label {data.labels[it.label]!r}, classifier labels are {labels}")
        items.append(DatasetItem(it.state, mapping[it.label], it.features))
    return LabeledDataset(items, data.name, labels)


# --------------------------------------------------------------------------
# Reports

def _radius_json(x):
    if x is None:
        return None
    return "infinite" if is_infinite(x) else float(x)


def _radius_from(x):
    if x is None:
        return None
    if x == "infinite":
        return INFINITE
    return float(x)


def report_to_json(report: VerificationReport, witness_file: Optional[str] = None, include_timing: bool = False) -> dict:
    labels = list(report.labels)

    def name(i):
        return labels[i] if 0 <= i < len(labels) else str(i)

    out = {
        "schema_version": SCHEMA,
        "epsilon": float(report.epsilon),
        "method": report.method,
        "dataset": report.dataset,
        "labels": labels,
        "robust_accuracy": report.robust_accuracy,
        "under_robust_accuracy": report.under_robust_accuracy,
        "sdp_calls": report.sdp_calls,
        "n_items": len(report.per_item),
        "n_evaluated": report.n_evaluated,
        "n_non_robust": len(report.non_robust),
        "adversarial_file": witness_file,
        "items": [
            {
                "index": r.index,
                "label": name(r.label),
                "rlb": r.rlb,
                "verdict": r.verdict,
                "optimal": _radius_json(r.optimal),
                "rub": r.rub,
                "boundary": r.boundary,
                "witness": r.witness_ref,
            }
            for r in report.per_item
        ],
    }
    if include_timing:
        out["timing"] = dict(report.timing)
    return out


def witnesses_to_dataset(report: VerificationReport) -> tuple[LabeledDataset, list[float], list[int]]:
    items, weights, sources = [], [], []
    label_of = {r.index: r.label for r in report.per_item}
    for sigma, src in report.adversarial_set:
        items.append(DatasetItem(sigma, label_of[src]))
        sources.append(src)
        weights.append(1.0)
    return LabeledDataset(items, f"{report.dataset}-witnesses", report.labels), weights, sources


def save_report(path, report: VerificationReport, data: Optional[LabeledDataset] = None,
                include_timing: bool = False) -> Optional[Path]:
    """Write the report; witnesses go to ``<stem>.witnesses.json`` when there are any.

    With ``data`` given, witnesses are weighted by their fidelity to the
    state they were found for. Returns the witness path, if written.
    """
    path = Path(path)
    witness_path = None
    if report.adversarial_set:
        wdata, weights, sources = witnesses_to_dataset(report)
        if data is not None:
            weights = [max(fidelity(data[s].state, sigma), 1e-12) for (sigma, s) in report.adversarial_set]
        witness_path = path.with_name(path.name.split(".")[0] + ".witnesses.json")
        save_dataset(witness_path, wdata, weights=weights, sources=sources)
    write_json(path, report_to_json(report, witness_path.name if witness_path else None, include_timing))
    return witness_path


def load_report(path) -> VerificationReport:
    d = read_json(path, DatasetError)
    _check_schema(d, DatasetError, str(path))
    labels = tuple(d.get("labels", ()))
    per_item = []
    for e in d["items"]:
        lab = e["label"]
        per_item.append(ItemResult(int(e["index"]), labels.index(lab) if lab in labels else int(lab), e["rlb"],
                                   e["verdict"], _radius_from(e["optimal"]), e["rub"], bool(e["boundary"]),
                                   e["witness"]))
    adversarial = []
    if d.get("adversarial_file"):
        wf = load_dataset_file(Path(path).parent / d["adversarial_file"])
        adversarial = [(it.state, src) for it, src in zip(wf.data, wf.sources)]
    return VerificationReport(d["epsilon"], d["method"], per_item, d["robust_accuracy"],
                              d["under_robust_accuracy"], adversarial, d["sdp_calls"], d.get("dataset", ""),
                              labels, d.get("timing", {}))
