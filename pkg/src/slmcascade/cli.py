"""Command line entry point: ``slmcascade <command> ...``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .backends import build_prompt
from .harness import (
    RunConfig,
    aggregate,
    build_engine,
    emit_report,
    load_dataset,
    read_log,
    replay,
    run_from_config,
    slm_calibration,
    sweep,
    sweep_csv,
    sweep_json,
    threshold_grid,
    write_log,
)
from .parser import ParsedResponse, parse_text
from .rewards import KL_SIGNS, RewardConfig, RolloutGroup, estimate_group_accuracy, score_group


def parse_thresholds(spec: str) -> list[float]:
    """``"0,0.5,1.1"`` or a ``start:stop:step`` range such as ``"0:1.1:0.1"``."""
    spec = spec.strip()
    if ":" in spec:
        start, stop, step = (float(x) for x in spec.split(":"))
        return threshold_grid(start, stop, step)
    return [float(x) for x in spec.split(",") if x.strip()]


def _out(text: str, path: Optional[str]) -> None:
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _response_from_json(obj: dict, prompt: str) -> ParsedResponse:
    if "text" in obj:
        return parse_text(obj["text"], prompt=prompt, check_language=obj.get("check_language", True))
    conf = obj.get("confidence")
    return ParsedResponse(
        reasoning=obj.get("reasoning", ""),
        answer=obj.get("answer"),
        confidence=None if conf is None else min(1.0, max(0.0, float(conf))),
        language_consistent=bool(obj.get("language_consistent", True)),
    )


def read_groups(path: str) -> list[RolloutGroup]:
    groups = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                question = obj["question"]
                gold = obj.get("gold", obj.get("gold_answer", obj.get("answer")))
                if gold is None:
                    raise KeyError("gold")
                prompt = build_prompt(question, "solver")
                responses = [_response_from_json(r, prompt) for r in obj["responses"]]
                groups.append(RolloutGroup(question, str(gold), tuple(responses)))
            except (KeyError, TypeError, ValueError) as exc:
                raise SystemExit(f"{path}:{lineno}: bad rollout group ({exc})")
    return groups


def cmd_eval(args) -> int:
    config = RunConfig.from_file(args.config)
    record_both = True if args.record_both else (False if args.decision_faithful else None)
    runlog = run_from_config(config, record_both=record_both)
    log_path = args.log or config.log_path
    write_log(runlog, log_path)
    report = aggregate(runlog, n_bins=args.bins)
    report_path = args.report or config.report_path
    if report_path:
        emit_report(report, report_path, "csv" if str(report_path).endswith(".csv") else "json")
    sys.stdout.write(json.dumps(report.to_dict(), indent=2) + "\n")
    faults = report.n_faults
    if faults:
        print(f"{faults} faulted rows (counted as incorrect)", file=sys.stderr)
    return 0


def cmd_sweep(args) -> int:
    runlog = read_log(args.log)
    points = sweep(runlog, parse_thresholds(args.thresholds), n_bins=args.bins)
    _out(sweep_csv(points) if args.format == "csv" else sweep_json(points), args.out)
    return 0


def cmd_replay(args) -> int:
    original = read_log(args.log)
    replayed = replay(args.log, concurrency=args.concurrency)
    if args.out:
        write_log(replayed, args.out)
    before, after = aggregate(original), aggregate(replayed)
    same = before.to_dict(rounded=False) == after.to_dict(rounded=False)
    payload = after.to_dict()
    payload["matches_original"] = same
    sys.stdout.write(json.dumps(payload, indent=2) + "\n")
    return 0 if same else 1


def cmd_reward_score(args) -> int:
    config = RewardConfig(variant=args.variant, epsilon=args.epsilon, kl_sign=args.kl_sign,
                          missing_confidence_reward=args.missing_confidence_reward)
    lines = []
    for gi, group in enumerate(read_groups(args.groups)):
        p_hat = estimate_group_accuracy(group)
        for ri, b in enumerate(score_group(group, config)):
            lines.append(json.dumps({"group": gi, "response": ri, "p_hat": p_hat, **b.to_dict()}))
    _out("".join(line + "\n" for line in lines), args.out)
    return 0


def cmd_calibrate(args) -> int:
    runlog = read_log(args.log)
    report = slm_calibration(runlog, n_bins=args.bins)
    if report is None:
        raise SystemExit("log has no SLM records")
    sys.stdout.write(json.dumps(report.to_dict(), indent=2) + "\n")
    if args.csv:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("bin_lower", "bin_upper", "count", "mean_confidence", "accuracy"))
        for b in report.bins:
            w.writerow((b.lower, b.upper, b.count, b.mean_confidence, b.accuracy))
        Path(args.csv).write_text(buf.getvalue(), encoding="utf-8")
    return 0


def cmd_parse(args) -> int:
    text = Path(args.text).read_text(encoding="utf-8")
    prompt = Path(args.prompt).read_text(encoding="utf-8") if args.prompt else None
    parsed = parse_text(text, prompt=prompt, check_language=not args.no_language_check)
    sys.stdout.write(json.dumps(parsed.summary(), indent=2) + "\n")
    return 0


def cmd_serve(args) -> int:
    from .gateway import serve

    config = RunConfig.from_file(args.config)
    dataset = load_dataset(config.dataset) if Path(config.dataset).exists() else []
    serve(build_engine(config, dataset), host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slmcascade", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("eval", help="run the cascade over a dataset and write a run log")
    e.add_argument("--config", required=True)
    mode = e.add_mutually_exclusive_group()
    mode.add_argument("--record-both", action="store_true", help="call both models on every question")
    mode.add_argument("--decision-faithful", action="store_true", help="call the LLM only on deferral")
    e.add_argument("--log", help="run log path (overrides config)")
    e.add_argument("--report", help="report path, .json or .csv (overrides config)")
    e.add_argument("--bins", type=int, default=10)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="re-aggregate a record-both log over thresholds")
    s.add_argument("--log", required=True)
    s.add_argument("--thresholds", default="0:1.1:0.1")
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    s.add_argument("--out")
    s.add_argument("--bins", type=int, default=10)
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("replay", help="re-run a log through replay backends and compare aggregates")
    r.add_argument("--log", required=True)
    r.add_argument("--out")
    r.add_argument("--concurrency", type=int, default=8)
    r.set_defaults(func=cmd_replay)

    w = sub.add_parser("reward-score", help="score rollout groups (JSONL) with the composite reward")
    w.add_argument("--groups", required=True)
    w.add_argument("--variant", required=True)
    w.add_argument("--epsilon", type=float, default=0.01)
    w.add_argument("--kl-sign", choices=KL_SIGNS, default="calibration_consistent")
    w.add_argument("--missing-confidence-reward", type=float, default=-1.0)
    w.add_argument("--out")
    w.set_defaults(func=cmd_reward_score)

    c = sub.add_parser("calibrate", help="SLM calibration metrics from a run log")
    c.add_argument("--log", required=True)
    c.add_argument("--bins", type=int, default=10)
    c.add_argument("--csv", help="also write the reliability table here")
    c.set_defaults(func=cmd_calibrate)

    t = sub.add_parser("parse", help="extract answer and confidence from a completion file")
    t.add_argument("--text", required=True)
    t.add_argument("--prompt", help="prompt file for the language check")
    t.add_argument("--no-language-check", action="store_true")
    t.set_defaults(func=cmd_parse)

    g = sub.add_parser("serve", help="serve cascade decisions over HTTP")
    g.add_argument("--config", required=True)
    g.add_argument("--host", default="127.0.0.1")
    g.add_argument("--port", type=int, default=8080)
    g.set_defaults(func=cmd_serve)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
