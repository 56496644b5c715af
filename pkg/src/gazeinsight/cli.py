"""Command line: validate, analyze, report, replay.

Exit codes
    0  success
    1  unexpected engine error
    2  parse failure (bad header, empty session, or any rejected row in validate)
    3  recomputed labels disagree with the logged Message column
    4  privacy refusal (salt missing/short, --no-pseudonym)
    5  missing analysis artifact
    6  bad configuration (missing input file, malformed rules/policy/AoI config)
   64  usage error
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import adaptation, gaze, ingest, insights, pipeline
from .errors import (
    EmptySession,
    MalformedHeader,
    MissingArtifact,
    PrivacyRefusal,
    SaltTooShort,
    UnknownMetricInRule,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_PARSE = 2
EXIT_DISAGREE = 3
EXIT_PRIVACY = 4
EXIT_MISSING = 5
EXIT_CONFIG = 6
EXIT_USAGE = 64

DEFAULT_SALT_ENV = "GAZEINSIGHT_SALT"

log = logging.getLogger("gazeinsight")


class _Parser(argparse.ArgumentParser):
    # keep exit code 2 for parse failures of the gaze log itself
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class UsageError(Exception):
    pass


def _screen(text):
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None


def _add_inputs(p, session_required=True):
    p.add_argument("--config", type=Path, help="JSON file supplying any flag; explicit flags win")
    p.add_argument("--session", action="append", type=Path, help="session CSV (repeatable)")
    p.add_argument("--meta", action="append", type=Path, help="session metadata JSON (one per --session)")
    p.add_argument("--aoi", type=Path, help="AoI config JSON")
    p.add_argument("--rules", type=Path, help="insight rule config JSON")
    p.add_argument("--policy", type=Path, help="adaptation policy JSON")
    p.add_argument("--screen", type=_screen, help="screen geometry WxH, overrides metadata")
    p.add_argument("--delimiter", help="CSV delimiter (default ',')")
    p.add_argument("--k", type=int, help="number of gaze clusters (default 4)")
    p.add_argument("--seed", type=int, help="clustering seed (default 42)")
    p.add_argument("--cluster-on", choices=["samples", "fixations"])
    p.add_argument("--dispersion-px", type=float)
    p.add_argument("--min-fixation-ms", type=float)
    p.add_argument("--visibility-timeout-ms", type=float)
    p.add_argument("--expectancy-window-ms", type=float)
    p.add_argument("--focus-gap-ms", type=float)
    p.add_argument("--response-window-ms", type=float)
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--salt-env", help=f"environment variable holding the pseudonym salt (default {DEFAULT_SALT_ENV})")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gazeinsight", description="Eye-tracking analytics for serious-game sessions.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("validate", help="parse a session and check labels against its Message column")
    p.add_argument("--session", type=Path, required=True)
    p.add_argument("--aoi", type=Path)
    p.add_argument("--meta", type=Path, help="only screen geometry is read from it")
    p.add_argument("--screen", type=_screen)
    p.add_argument("--delimiter", default=",")
    p.add_argument("--json", action="store_true", help="print the summary as JSON")

    p = sub.add_parser("analyze", help="run the full pipeline and write an artifact directory")
    _add_inputs(p)

    p = sub.add_parser("report", help="re-render the insight report from an analysis directory")
    p.add_argument("--out", type=Path, required=True, help="directory written by analyze")
    p.add_argument("--rules", type=Path)
    p.add_argument("--no-pseudonym", action="store_true",
                   help="request raw identities in the report (always refused)")
    p.add_argument("--salt-env")

    p = sub.add_parser("replay", help="stream adaptation signals for a session as JSON lines")
    _add_inputs(p)
    p.add_argument("--batch", action="store_true", help="use the batch replay instead of the streaming evaluator")
    return parser


_CONFIG_KEYS = {
    "session", "meta", "aoi", "rules", "policy", "screen", "delimiter", "k", "seed", "cluster_on",
    "dispersion_px", "min_fixation_ms", "visibility_timeout_ms", "expectancy_window_ms",
    "focus_gap_ms", "response_window_ms", "out", "salt_env",
}
_PATH_KEYS = {"aoi", "rules", "policy", "out"}


def _merge_config(args):
    if getattr(args, "config", None) is None:
        return args
    if not args.config.is_file():
        raise FileNotFoundError(f"config file not found: {args.config}")
    data = json.loads(args.config.read_text(encoding="utf-8"))
    base = args.config.parent
    for key, value in data.items():
        dest = key.replace("-", "_")
        if dest not in _CONFIG_KEYS:
            raise UsageError(f"unknown config key {key!r}")
        if getattr(args, dest, None) is not None:
            continue
        if dest in ("session", "meta"):
            value = [base / v for v in (value if isinstance(value, list) else [value])]
        elif dest in _PATH_KEYS:
            value = base / value
        elif dest == "screen":
            value = _screen(value) if isinstance(value, str) else tuple(value)
        setattr(args, dest, value)
    return args


def _engine_config(args) -> pipeline.EngineConfig:
    cfg = pipeline.EngineConfig()
    for name in ("k", "seed", "cluster_on", "dispersion_px", "min_fixation_ms", "visibility_timeout_ms",
                 "expectancy_window_ms", "focus_gap_ms", "response_window_ms"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    if getattr(args, "rules", None) is not None:
        cfg.rules = insights.load_rules(args.rules)
    if getattr(args, "policy", None) is not None:
        cfg.policy = adaptation.AdaptationPolicy.from_dict(json.loads(args.policy.read_text(encoding="utf-8")))
    return cfg


def _check_inputs(args):
    sessions = args.session or []
    if not sessions:
        raise UsageError("at least one --session is required")
    metas = args.meta or []
    if metas and len(metas) != len(sessions):
        raise UsageError("give one --meta per --session")
    for path in [*sessions, *metas, args.aoi, args.rules, args.policy]:
        if path is not None and not Path(path).is_file():
            raise FileNotFoundError(f"input file not found: {path}")


def _salt(args, required):
    name = args.salt_env or DEFAULT_SALT_ENV
    value = os.environ.get(name)
    if value is None:
        if required:
            raise PrivacyRefusal(f"salt environment variable {name} is not set")
        return None
    salt = value.encode("utf-8")
    if len(salt) < ingest.MIN_SALT_BYTES:
        raise SaltTooShort(f"salt in {name} is shorter than {ingest.MIN_SALT_BYTES} bytes")
    return salt


# --------------------------------------------------------------------- commands

def cmd_validate(args) -> int:
    width, height = ingest.DEFAULT_SCREEN
    if args.meta is not None:
        meta = json.loads(args.meta.read_text(encoding="utf-8"))
        width = int(meta.get("screen_width", width))
        height = int(meta.get("screen_height", height))
    if args.screen is not None:
        width, height = args.screen
    aois = ingest.load_aoi_config(args.aoi) if args.aoi else []
    options = ingest.FormatOptions(delimiter=args.delimiter, screen_width=width, screen_height=height, aois=aois)
    try:
        session = ingest.parse_session(args.session.read_bytes(), options)
    except (MalformedHeader, EmptySession) as exc:
        print(f"parse failed: {exc}")
        ledger = getattr(exc, "ledger", None)
        if ledger is not None:
            _print_ledger(ledger)
        return EXIT_PARSE

    end = ingest.session_end_ms(session.samples)
    events = ingest.derive_disappearances(session.events, ingest.DEFAULT_VISIBILITY_TIMEOUT_MS, end)
    labels = gaze.label_samples(session, aois, gaze.visibility_windows(events, aois, end))
    report = gaze.consistency_report(session, labels)
    ledger = session.ledger

    if args.json:
        print(json.dumps({"parse": ledger.to_dict(), "consistency": report.to_dict() if report else None},
                         sort_keys=True, indent=2))
    else:
        _print_ledger(ledger)
        if report is None:
            print("labels: no Message column, nothing to compare")
        else:
            print(f"labels: agreement {report.agree}/{report.compared}"
                  + (f" ({report.skipped} invalid rows skipped)" if report.skipped else ""))
            for row in report.rows:
                if not row["agree"]:
                    print(f"  row {row['index']} t={row['timestamp_ms']!r}: source {row['source']!r} "
                          f"computed {row['computed']!r}: {'; '.join(row['diff'])}")
    if ledger.rejected_count:
        return EXIT_PARSE
    if report is not None and not report.all_agree:
        return EXIT_DISAGREE
    return EXIT_OK


def _print_ledger(ledger):
    print(f"rows: {ledger.total_rows} total, {ledger.accepted} accepted, {ledger.rejected_count} rejected"
          f" ({ledger.clamped} clamped, {ledger.invalid} invalid)")
    for line, reason in ledger.rejected:
        print(f"  rejected line {line}: {reason}")


def _analyze_one(job):
    session_path, meta_path, aoi_path, salt, config, screen, delimiter, out_dir = job
    manifest = pipeline.run_analysis(session_path, out_dir, meta_path, aoi_path, salt, config, screen, delimiter)
    return str(out_dir), len(manifest["artifacts"])


def cmd_analyze(args) -> int:
    _check_inputs(args)
    if args.out is None:
        raise UsageError("--out is required")
    salt = _salt(args, required=bool(args.meta))
    config = _engine_config(args)
    delimiter = args.delimiter or ","
    sessions = args.session
    metas = args.meta or [None] * len(sessions)

    if len(sessions) == 1:
        jobs = [(sessions[0], metas[0], args.aoi, salt, config, args.screen, delimiter, args.out)]
    else:
        jobs = []
        for i, (s, m) in enumerate(zip(sessions, metas)):
            if m is not None:
                name = ingest.pseudonymize(ingest.load_metadata(m).participant_id, salt)[:16]
            else:
                name = f"session-{i:03d}"
            jobs.append((s, m, args.aoi, salt, config, args.screen, delimiter, args.out / name))

    if len(jobs) == 1:
        results = [_analyze_one(jobs[0])]
    else:
        with ProcessPoolExecutor(max_workers=min(len(jobs), os.cpu_count() or 1)) as pool:
            results = list(pool.map(_analyze_one, jobs))
    for out_dir, n in results:
        print(f"wrote {n} artifacts to {out_dir}")
    return EXIT_OK


def cmd_report(args) -> int:
    if args.no_pseudonym:
        raise PrivacyRefusal("reports always use the pseudonym; --no-pseudonym is refused")
    metrics_path = args.out / "metrics.json"
    if not metrics_path.is_file():
        raise MissingArtifact(f"{metrics_path} not found; run analyze first")
    if args.rules is not None and not args.rules.is_file():
        raise FileNotFoundError(f"input file not found: {args.rules}")
    mdoc = json.loads(metrics_path.read_text(encoding="utf-8"))
    values = {k: insights.MetricValue.from_dict(v) for k, v in mdoc["metric_values"].items()}
    rules = insights.load_rules(args.rules)
    found = insights.derive_insights(values, rules)
    meta = {"participant_pseudonym": mdoc["participant_pseudonym"],
            "engine_config_hash": mdoc["engine_config_hash"],
            "rules_version": insights.rules_fingerprint(rules)}
    clusters_path = args.out / "clusters.json"
    if clusters_path.is_file():
        meta["cluster_ranking"] = json.loads(clusters_path.read_text(encoding="utf-8"))["ranking"]
    md, js = insights.render_report(found, mdoc, meta)
    files = {p.name: p.read_text(encoding="utf-8") for p in sorted(args.out.iterdir())
             if p.is_file() and p.name != "manifest.json"}
    files["report.md"], files["report.json"] = md, js
    pipeline.write_files(args.out, files)
    sys.stdout.write(md)
    return EXIT_OK


def cmd_replay(args) -> int:
    _check_inputs(args)
    if len(args.session) != 1:
        raise UsageError("replay takes exactly one --session")
    config = _engine_config(args)
    aois = ingest.load_aoi_config(args.aoi) if args.aoi else []
    salt = _salt(args, required=bool(args.meta))
    session, _ = pipeline.load_session(args.session[0], (args.meta or [None])[0], salt, aois,
                                       args.screen, args.delimiter or ",")
    _, stimuli, fixations = pipeline.prepare(session, aois, config)
    span = (session.samples[0].timestamp_ms, ingest.session_end_ms(session.samples))
    sink = None
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        sink = open(args.out / "replay.jsonl", "w", encoding="utf-8")
    try:
        if args.batch:
            signals = adaptation.replay_batch(stimuli, fixations, span, config.policy)
            for s in signals:
                line = s.to_json() + "\n"
                sys.stdout.write(line)
                sys.stdout.flush()
                if sink:
                    sink.write(line)
        else:
            stream = adaptation.metric_stream(stimuli, fixations, span, config.policy)
            for s in adaptation.evaluate_adaptation(stream, config.policy, sink):
                sys.stdout.write(s.to_json() + "\n")
                sys.stdout.flush()
    finally:
        if sink:
            sink.close()
    return EXIT_OK


COMMANDS = {"validate": cmd_validate, "analyze": cmd_analyze, "report": cmd_report, "replay": cmd_replay}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = _merge_config(args)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"gazeinsight: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PrivacyRefusal, SaltTooShort) as exc:
        print(f"gazeinsight: privacy: {exc}", file=sys.stderr)
        return EXIT_PRIVACY
    except MissingArtifact as exc:
        print(f"gazeinsight: missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (MalformedHeader, EmptySession) as exc:
        print(f"gazeinsight: parse failed: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (FileNotFoundError, UnknownMetricInRule, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"gazeinsight: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - last resort, keep the exit code contract
        log.debug("unexpected failure", exc_info=True)
        print(f"gazeinsight: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
