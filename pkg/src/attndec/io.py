"""Matrix files, dataset manifests, flat config files and report emission.

Binary matrix layout (``.mvts``): a 16-byte header of ASCII ``MVTS``, then
little-endian ``u32`` sample count ``T``, ``u32`` channel count ``D`` and a
reserved zero ``u32``, followed by ``T * D`` little-endian float64 values in
row-major order. A one-line sidecar ``<file>.meta`` carries
``rate=<float> labels=<a,b,...>``. CSV matrices have a header row of channel
labels and take their rate from the manifest.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import fields
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .decoding import DecodeConfig, DecodeReport, IscReport
from .errors import InvalidArgument, InvalidDataset
from .linalg import LagSpec, TimeSeries
from .records import TrialRecord, check_attention_swap
from .stats import binomial_interval

MAGIC = b"MVTS"
HEADER = struct.Struct("<4sIII")
FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"


# ---------------------------------------------------------------- matrices

def _check_labels(labels: Sequence[str]) -> None:
    for lab in labels:
        if not lab or any(c in lab for c in ", \t\r\n="):
            raise InvalidArgument(f"channel label {lab!r} cannot be stored (no commas, '=' or whitespace)")


def write_matrix(path, series: TimeSeries) -> None:
    """Write ``series`` as binary (``.mvts`` + sidecar) or CSV, by extension."""
    path = Path(path)
    _check_labels(series.labels)
    if path.suffix == ".csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(series.labels)
            writer.writerows([[repr(float(v)) for v in row] for row in series.data])
        return
    T, D = series.data.shape
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, T, D, 0))
        fh.write(np.ascontiguousarray(series.data, dtype="<f8").tobytes())
    Path(f"{path}.meta").write_text(f"rate={float(series.rate)!r} labels={','.join(series.labels)}\n")


def read_matrix(path, rate: float | None = None) -> TimeSeries:
    """Read a matrix file; CSV files need ``rate`` from the manifest."""
    path = Path(path)
    if path.suffix == ".csv":
        if rate is None:
            raise InvalidArgument(f"{path}: CSV matrices need a sample rate")
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise InvalidDataset(f"{path}: empty CSV matrix")
        labels = tuple(rows[0])
        try:
            data = np.array([[float(v) for v in row] for row in rows[1:]], dtype=float)
        except ValueError as exc:
            raise InvalidDataset(f"{path}: {exc}") from None
        if data.ndim != 2 or data.shape[1] != len(labels):
            raise InvalidDataset(f"{path}: rows do not match the {len(labels)} header labels")
        return TimeSeries(data, rate, labels)
    raw = path.read_bytes()
    if len(raw) < HEADER.size:
        raise InvalidDataset(f"{path}: truncated header")
    magic, T, D, _ = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise InvalidDataset(f"{path}: bad magic {magic!r}")
    expected = HEADER.size + 8 * T * D
    if len(raw) != expected:
        raise InvalidDataset(f"{path}: header declares {T}x{D} ({expected} bytes) but file has {len(raw)} bytes")
    data = np.frombuffer(raw, dtype="<f8", offset=HEADER.size).reshape(T, D).astype(float)
    meta = {}
    meta_path = Path(f"{path}.meta")
    if meta_path.exists():
        for item in meta_path.read_text().split():
            key, _, value = item.partition("=")
            meta[key] = value
    file_rate = float(meta["rate"]) if "rate" in meta else rate
    if file_rate is None:
        raise InvalidDataset(f"{path}: no sample rate in sidecar or manifest")
    labels = tuple(meta["labels"].split(",")) if meta.get("labels") else ()
    if labels and len(labels) != D:
        raise InvalidDataset(f"{path}: sidecar lists {len(labels)} labels for {D} channels")
    return TimeSeries(data, file_rate, labels)


# ---------------------------------------------------------------- manifests

def write_manifest(out_dir, rate: float, trials: Sequence[Mapping[str, Any]], extra: Mapping | None = None) -> Path:
    doc = {
        "format_version": FORMAT_VERSION,
        "rate": float(rate),
        "subjects": sorted({t["subject_id"] for t in trials}),
        "trials": list(trials),
    }
    if extra:
        doc.update(extra)
    path = Path(out_dir) / MANIFEST_NAME
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path


def load_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise InvalidDataset(f"manifest {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise InvalidDataset(f"manifest {path} is not valid JSON: {exc}") from None
    for key in ("format_version", "rate", "trials"):
        if key not in doc:
            raise InvalidDataset(f"manifest {path} lacks {key!r}")
    if doc["format_version"] != FORMAT_VERSION:
        raise InvalidDataset(f"manifest {path}: unsupported format_version {doc['format_version']}")
    doc["_root"] = str(path.parent)
    return doc


def manifest_subjects(doc: Mapping) -> list[str]:
    return sorted({t["subject_id"] for t in doc["trials"]})


def load_records(doc: Mapping, subjects: Sequence[str] | None = None,
                 modalities: Sequence[str] | None = None) -> list[TrialRecord]:
    """Materialize trial records, optionally for a subset of subjects and modalities."""
    root = Path(doc["_root"])
    rate = float(doc["rate"])
    wanted = None if subjects is None else set(subjects)
    cache: dict[str, TimeSeries] = {}

    def load(rel: str) -> TimeSeries:
        if rel not in cache:
            p = root / rel
            if not p.exists():
                raise InvalidDataset(f"manifest references missing file {p}")
            cache[rel] = read_matrix(p, rate)
        return cache[rel]

    records = []
    for i, t in enumerate(doc["trials"]):
        if wanted is not None and t["subject_id"] not in wanted:
            continue
        try:
            mods = {name: load(rel) for name, rel in t["modalities"].items()
                    if modalities is None or name in modalities}
            feats = {int(k): load(rel) for k, rel in t["features"].items()}
            records.append(TrialRecord(t["subject_id"], int(t["pair_id"]), int(t["presentation"]),
                                       int(t["attended_object"]), mods, feats))
        except KeyError as exc:
            raise InvalidDataset(f"manifest trial {i} lacks field {exc}") from None
    check_attention_swap(records)
    return records


# ---------------------------------------------------------------- flat config

def _parse_lag(text: str) -> LagSpec:
    text = text.strip()
    if ":" in text:
        a, b = text.split(":", 1)
        return LagSpec.span(int(a), int(b))
    return LagSpec(tuple(int(v) for v in text.split(",") if v.strip()))


def format_lag(lag: LagSpec) -> str:
    o = lag.offsets
    if list(o) == list(range(o[0], o[-1] + 1)):
        return f"{o[0]}:{o[-1]}"
    return ",".join(map(str, o))


def _coerce(key: str, value: str, kind: type):
    try:
        if kind is bool:
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if kind is LagSpec:
            return _parse_lag(value)
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
        return value
    except (ValueError, InvalidArgument) as exc:
        raise InvalidArgument(f"config key {key!r}: cannot parse {value!r} as {kind.__name__} ({exc})") from None


def parse_config_text(text: str, schema: Mapping[str, type], source: str = "config") -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise InvalidArgument(f"{source}:{n}: expected 'key = value', got {line!r}")
        if key not in schema:
            raise InvalidArgument(f"{source}:{n}: unknown config key {key!r}")
        out[key] = _coerce(key, value.strip(), schema[key])
    return out


def parse_config(path, schema: Mapping[str, type]) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InvalidArgument(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text, schema, str(path))


def decode_schema() -> dict[str, type]:
    return {f.name: (LagSpec if isinstance(f.default, LagSpec) else type(f.default)) for f in fields(DecodeConfig)}


def config_dict(obj) -> dict:
    out = {}
    for f in fields(obj):
        v = getattr(obj, f.name)
        out[f.name] = format_lag(v) if isinstance(v, LagSpec) else v
    return out


# ---------------------------------------------------------------- reports

def _floats(a) -> list[float]:
    return [float(v) for v in np.asarray(a, dtype=float).ravel()]


def _num(v: float):
    return None if not np.isfinite(v) else float(v)


def _null_summary(null, generator: str | None = None) -> dict | None:
    if null is None:
        return None
    v = null.values if generator is None else np.asarray(null, dtype=float)
    if v.size == 0:
        return None
    return {
        "generator": null.generator if generator is None else generator,
        "n": int(v.size), "mean": float(v.mean()), "median": float(np.median(v)),
        "q025": float(np.quantile(v, 0.025)), "q975": float(np.quantile(v, 0.975)),
    }


def decode_report_dict(report: DecodeReport) -> dict:
    n_eff = report.n_effective
    lo, hi = binomial_interval(n_eff) if n_eff else (None, None)
    return {
        "kind": "decode",
        "config": config_dict(report.config),
        "mean_accuracy": _num(report.mean_accuracy),
        "accuracy_threshold": _num(report.accuracy_threshold),
        "chance_interval": {"n_effective": n_eff, "low": lo, "high": hi},
        "null_accuracy": _null_summary(report.null_accuracy),
        "null_corr": _null_summary(report.null_corr),
        "corr_threshold": _num(report.corr_threshold),
        "subjects": [
            {
                "subject_id": s.subject_id,
                "accuracy": _num(s.accuracy),
                "n_trials": s.n_trials,
                "n_effective": s.n_effective,
                "p_value": _num(s.p_value),
                "p_value_smoothed": _num(s.p_value_smoothed),
                "threshold": _num(s.threshold),
                "folds": [
                    {
                        "fold": f.fold, "accuracy": _num(f.accuracy), "n_trials": f.n_trials,
                        "mean_target": _num(f.mean_target), "mean_imposter": _num(f.mean_imposter),
                        "train_corrs": _floats(f.train_corrs), "test_corrs": _floats(f.test_corrs),
                        "error": f.error,
                    }
                    for f in s.folds
                ],
            }
            for s in report.subjects
        ],
        "warnings": list(report.warnings),
    }


def write_decode_report(out_dir, report: DecodeReport) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jpath = out / "report.json"
    jpath.write_text(json.dumps(decode_report_dict(report), indent=2) + "\n")
    cpath = out / "trials.csv"
    with open(cpath, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "fold", "index", "start", "imposter_start", "score_target", "score_imposter", "correct"])
        for s in report.subjects:
            for f in s.folds:
                for t in f.trials:
                    w.writerow([s.subject_id, t.fold, t.index, t.start, t.imposter_start,
                                repr(t.score_target), repr(t.score_imposter), int(t.correct)])
    return jpath, cpath


def write_isc_report(out_dir, report: IscReport) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "kind": "isc",
        "config": config_dict(report.config),
        "k": report.k,
        "subjects": list(report.subjects),
        "mean_isc": _floats(report.mean_isc),
        "folds": [
            {"fold": f.fold, "isc": _floats(f.isc), "threshold": _num(f.threshold), "p_value": _num(f.p_value),
             "null": _null_summary(f.null, "circular_shift"),
             "error": f.error}
            for f in report.folds
        ],
    }
    jpath = out / "isc.json"
    jpath.write_text(json.dumps(doc, indent=2) + "\n")
    cpath = out / "isc.csv"
    with open(cpath, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fold", "component", "isc", "threshold", "p_value"])
        for f in report.folds:
            for c, v in enumerate(f.isc, 1):
                w.writerow([f.fold, c, repr(float(v)), repr(f.threshold) if c == report.k else "", repr(f.p_value) if c == report.k else ""])
    return jpath, cpath


def load_report_accuracies(path) -> dict[str, float]:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidDataset(f"cannot read report {path}: {exc}") from None
    if doc.get("kind") != "decode":
        raise InvalidDataset(f"{path} is not a decode report")
    return {s["subject_id"]: s["accuracy"] for s in doc["subjects"] if s["accuracy"] is not None}


# ---------------------------------------------------------------- simulated datasets

def _write_subject(config, index: int, out_dir: str) -> tuple[list[dict], list[dict], dict]:
    from .simulator import simulate_subject

    out = Path(out_dir)
    records, truths, model = simulate_subject(config, index)
    sid = records[0].subject_id
    (out / sid).mkdir(parents=True, exist_ok=True)
    (out / "audit" / sid).mkdir(parents=True, exist_ok=True)
    entries, audit = [], []
    for rec, tr in zip(records, truths):
        stem = f"pair{rec.pair_id:02d}_pres{rec.presentation}"
        mods = {}
        for name, series in rec.modalities.items():
            rel = f"{sid}/{stem}_{name}.mvts"
            write_matrix(out / rel, series)
            mods[name] = rel
        entries.append({
            "subject_id": sid, "pair_id": rec.pair_id, "presentation": rec.presentation,
            "attended_object": rec.attended_object, "modalities": mods,
            "features": {str(o): f"features/pair{rec.pair_id:02d}_obj{o}.mvts" for o in (1, 2)},
        })
        rel = f"audit/{sid}/{stem}_truth.mvts"
        write_matrix(out / rel, TimeSeries(np.column_stack([tr.focus.astype(float), tr.artifact]),
                                           rec.rate, ("focus", "artifact")))
        audit.append({
            "subject_id": sid, "pair_id": tr.pair_id, "presentation": tr.presentation,
            "attended_object": tr.attended_object, "neural_power": tr.neural_power,
            "noise_power": tr.noise_power, "series": rel,
        })
    subject = {"kernel": _floats(model.kernel), "topography": _floats(model.topography),
               "eye_topography": _floats(model.eye_topography)}
    return entries, audit, subject


def write_dataset(config, out_dir, workers: int = 1) -> Path:
    """Simulate and write a dataset; returns the manifest path.

    Ground truth goes under ``audit/``, which the decoding path never reads.
    """
    from dataclasses import asdict

    from .decoding import parallel_map
    from .simulator import gen_pair_stimulus, subject_id

    out = Path(out_dir)
    try:
        (out / "features").mkdir(parents=True, exist_ok=True)
        (out / "audit").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InvalidArgument(f"cannot create output directory {out}: {exc.strerror}") from None
    pairs = {}
    for p in range(config.n_pairs):
        stim = gen_pair_stimulus(config, p)
        for o in (1, 2):
            write_matrix(out / f"features/pair{stim.pair_id:02d}_obj{o}.mvts", stim.features[o])
        rel = f"audit/pair{stim.pair_id:02d}_latent.mvts"
        write_matrix(out / rel, TimeSeries(np.column_stack([stim.latents[1], stim.latents[2]]),
                                           config.rate, ("latent_1", "latent_2")))
        pairs[str(stim.pair_id)] = {"first_attended": stim.first_attended, "latents": rel}
    results = parallel_map(_write_subject, [(config, i, str(out)) for i in range(config.n_subjects)], workers)
    trials = [e for entries, _, _ in results for e in entries]
    truth = {
        "config": asdict(config),
        "pairs": pairs,
        "subjects": {subject_id(i): r[2] for i, r in enumerate(results)},
        "trials": [a for _, audit, _ in results for a in audit],
    }
    (out / "audit" / "truth.json").write_text(json.dumps(truth, indent=2) + "\n")
    return write_manifest(out, config.rate, trials)
