"""``attndec`` command line: simulate | decode | isc | stats.

Exit codes: 0 success, 1 internal error, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from itertools import combinations
from pathlib import Path

import numpy as np

from . import io
from .decoding import (
    CONFOUND_MODALITIES,
    N_ISC_SHIFTS,
    SACCADE_MODES,
    TASKS,
    DecodeConfig,
    decode_subject,
    isc_cv,
    parallel_map,
    resolve_workers,
    summarize,
)
from .errors import AttnDecError, InvalidArgument, InvalidDataset
from .records import MODALITIES
from .simulator import SimConfig
from .stats import ALPHA, bh_adjust, wilcoxon_signed_rank


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int, help="master random seed")
    p.add_argument("--workers", type=int, help="parallel workers (default: $ATTNDEC_WORKERS or the CPU count)")
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="attndec", description="Attention decoding from multichannel biosignals.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    _add_common(p)

    for name in ("decode", "isc"):
        p = sub.add_parser(name, help="cross-validated decoding accuracy" if name == "decode" else "cross-validated ISC")
        p.add_argument("manifest", help="dataset manifest (file or directory)")
        _add_common(p)
        p.add_argument("--regress-confounds", action="store_true", help="regress EOG and gaze velocity out of both views")
        p.add_argument("--region", help="decode only this channel region")
        p.add_argument("--modality", choices=MODALITIES, help="data modality (default EEG)")
        p.add_argument("--segment-seconds", type=float, help="test segment length (default 30)")
        if name == "decode":
            p.add_argument("--task", choices=TASKS, help="svad (default) or mm")
            p.add_argument("--combine-gaze-v", action="store_true", help="append gaze velocity as an extra channel")
            p.add_argument("--n-circular-shifts", type=int, help="accuracy null size per fold")
            p.add_argument("--n-phase-surrogates", type=int, help="correlation null size per fold")
            p.add_argument("--swap-labels", action="store_true", help="invert attended/unattended test labels")
            p.add_argument("--saccade-removal", choices=SACCADE_MODES,
                           help="drop samples around saccades, or the same amount at random (control)")
        else:
            p.add_argument("--k", type=int, default=1, help="component whose ISC is tested (1-based)")
            p.add_argument("--n-null", type=int, default=N_ISC_SHIFTS, help="circular-shift null size per fold")

    p = sub.add_parser("stats", help="paired comparisons between decode reports")
    p.add_argument("reports", nargs="+", help="report.json files or their directories")
    p.add_argument("--test", choices=("wilcoxon",), default="wilcoxon")
    p.add_argument("--adjust", choices=("bh", "none"), default="bh")
    p.add_argument("--alpha", type=float, default=ALPHA)
    p.add_argument("--out", required=True)
    return parser


# ---------------------------------------------------------------- simulate

def cmd_simulate(args) -> int:
    values = io.parse_config(args.config, SimConfig.field_types()) if args.config else {}
    if args.seed is not None:
        values["seed"] = args.seed
    config = SimConfig(**values)
    manifest = io.write_dataset(config, args.out, resolve_workers(args.workers))
    print(manifest)
    return 0


# ---------------------------------------------------------------- decode / isc

def _decode_config(args) -> DecodeConfig:
    values = io.parse_config(args.config, io.decode_schema()) if args.config else {}
    flags = {
        "seed": args.seed, "segment_seconds": args.segment_seconds, "region": args.region,
        "modality": args.modality,
        "task": getattr(args, "task", None),
        "n_circular_shifts": getattr(args, "n_circular_shifts", None),
        "n_phase_surrogates": getattr(args, "n_phase_surrogates", None),
        "saccade_removal": getattr(args, "saccade_removal", None),
    }
    values.update({k: v for k, v in flags.items() if v is not None})
    if args.regress_confounds:
        values["confound_mode"] = "regress"
    for flag in ("combine_gaze_v", "swap_labels"):
        if getattr(args, flag, False):
            values[flag] = True
    return DecodeConfig(**values)


def _needed_modalities(config: DecodeConfig) -> set[str]:
    need = {config.modality}
    if config.combine_gaze_v:
        need.add("GAZE_V")
    if config.confound_mode == "regress":
        need.update(CONFOUND_MODALITIES)
    if config.saccade_removal != "none":
        need.add("SACC")
    return need


def _check_manifest(doc: dict, config: DecodeConfig) -> None:
    """Structural checks that need no matrix data."""
    seen: dict[tuple[str, int], dict[int, int]] = {}
    for i, t in enumerate(doc["trials"]):
        try:
            missing = _needed_modalities(config) - set(t["modalities"])
            key = (t["subject_id"], int(t["pair_id"]))
            presentation, attended = int(t["presentation"]), int(t["attended_object"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidDataset(f"manifest trial {i} is malformed: {exc}") from None
        if missing:
            raise InvalidDataset(f"manifest trial {i} lacks modality {sorted(missing)[0]!r}")
        seen.setdefault(key, {})[presentation] = attended
    if not seen:
        raise InvalidDataset("manifest lists no trials")
    for (subject, pair), pres in sorted(seen.items()):
        if set(pres) != {1, 2}:
            raise InvalidDataset(f"subject {subject} pair {pair} is missing a presentation")
        if pres[1] == pres[2]:
            raise InvalidDataset(f"subject {subject} pair {pair}: both presentations attend object {pres[1]}")


def _decode_from_manifest(manifest: str, subject: str, config: DecodeConfig):
    doc = io.load_manifest(manifest)
    return decode_subject(io.load_records(doc, [subject], _needed_modalities(config)), config)


def cmd_decode(args) -> int:
    config = _decode_config(args)
    doc = io.load_manifest(args.manifest)
    _check_manifest(doc, config)
    subjects = io.manifest_subjects(doc)
    results = parallel_map(_decode_from_manifest, [(args.manifest, s, config) for s in subjects],
                           resolve_workers(args.workers))
    report = summarize(results, config)
    jpath, cpath = io.write_decode_report(args.out, report)
    print(f"report: {jpath}")
    print(f"trials: {cpath}")
    print(f"mean accuracy: {report.mean_accuracy:.4f} (null 97.5th percentile {report.accuracy_threshold:.4f})")
    if report.warnings:
        print(f"warnings: {len(report.warnings)} failed fold(s)", file=sys.stderr)
        for w in report.warnings:
            print(f"  {w}", file=sys.stderr)
    return 0


def cmd_isc(args) -> int:
    config = _decode_config(args)
    doc = io.load_manifest(args.manifest)
    _check_manifest(doc, config)
    subjects = io.manifest_subjects(doc)
    if len(subjects) < 2:
        raise InvalidDataset(f"ISC needs at least 2 subjects, the manifest has {len(subjects)}")
    if args.n_null < 0:
        raise InvalidArgument("--n-null must be nonnegative")
    records = io.load_records(doc, None, _needed_modalities(config))
    report = isc_cv(records, config, args.k, args.n_null)
    jpath, cpath = io.write_isc_report(args.out, report)
    print(f"report: {jpath}")
    print(f"table: {cpath}")
    for f in report.folds:
        if f.error:
            print(f"fold {f.fold}: failed ({f.error})", file=sys.stderr)
        else:
            print(f"fold {f.fold}: ISC_{args.k} = {f.isc[args.k - 1]:.4f} (threshold {f.threshold:.4f})")
    return 0


# ---------------------------------------------------------------- stats

def compare_reports(accs: list[dict[str, float]], names: list[str], adjust: str = "bh",
                    alpha: float = ALPHA) -> list[dict]:
    """Two-sided Wilcoxon signed-rank test for every pair of reports."""
    base = set(accs[0])
    for name, a in zip(names, accs):
        if set(a) != base:
            raise InvalidDataset(f"report {name} covers a different subject set")
    subjects = sorted(base)
    rows = []
    for i, j in combinations(range(len(accs)), 2):
        a = np.array([accs[i][s] for s in subjects])
        b = np.array([accs[j][s] for s in subjects])
        d = a - b
        if np.all(d == 0):
            p, note = 1.0, "degenerate: all paired differences are zero"
        else:
            p, note = wilcoxon_signed_rank(a, b), ""
        rows.append({"a": names[i], "b": names[j], "n": len(subjects), "median_difference": float(np.median(d)),
                     "p": p, "note": note})
    adjusted = bh_adjust([r["p"] for r in rows]) if adjust == "bh" else [r["p"] for r in rows]
    for r, q in zip(rows, adjusted):
        r["p_adjusted"] = float(q)
        r["significant"] = bool(q < alpha)
    return rows


def cmd_stats(args) -> int:
    paths = [Path(p) / "report.json" if Path(p).is_dir() else Path(p) for p in args.reports]
    if len(paths) < 2:
        raise InvalidArgument("stats needs at least two reports")
    if not 0 < args.alpha < 1:
        raise InvalidArgument("--alpha must lie in (0, 1)")
    names = [str(p) for p in paths]
    rows = compare_reports([io.load_report_accuracies(p) for p in paths], names, args.adjust, args.alpha)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "stats.json").write_text(json.dumps(
        {"kind": "stats", "test": args.test, "adjust": args.adjust, "alpha": args.alpha, "comparisons": rows},
        indent=2) + "\n")
    with open(out / "stats.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        flag = "*" if r["significant"] else " "
        note = f"  [{r['note']}]" if r["note"] else ""
        print(f"{flag} {r['a']} vs {r['b']}: p = {r['p']:.4g}, adjusted = {r['p_adjusted']:.4g}{note}")
    return 0


COMMANDS = {"simulate": cmd_simulate, "decode": cmd_decode, "isc": cmd_isc, "stats": cmd_stats}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "workers", None) is not None and args.workers < 1:
        print("attndec: error: --workers must be at least 1", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except (InvalidArgument, InvalidDataset, OSError) as exc:
        msg = exc.strerror + f": {exc.filename}" if isinstance(exc, OSError) and exc.strerror else str(exc)
        print(f"attndec: error: {msg}", file=sys.stderr)
        return 2
    except AttnDecError as exc:
        print(f"attndec: failed: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - reported, not hidden
        print(f"attndec: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
