"""Dataset loading, repeated cascade runs, the JSONL run log, aggregation into
Pass@1 / Avg Cost / LLM%, and offline threshold sweeps."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .backends import BackendSpec, ReplayBackend, ScriptedBackend, make_backend
from .cascade import (
    EXTERNAL_ROUTER,
    CascadeDecision,
    CascadeEngine,
    CascadeFault,
    CascadePolicy,
    StageOutput,
    charged_costs,
    check_threshold,
    decide,
)
from .costs import DIRECT, CostBreakdown, CostConfig, TokenUsage, llm_cost, relative_change, slm_or_router_cost, system_cost
from .metrics import DEFAULT_BINS, CalibrationReport, PredictionRecord, calibration_report
from .rewards import Verifier, correctness, default_verifier

log = logging.getLogger(__name__)

SCHEMA = "slmcascade.runlog"
SCHEMA_VERSION = 1
TOKENIZER_NOTE = "token counts are each stage's own reported usage; SLM and LLM tokenizers may differ"

REPORT_CSV_FIELDS = ("scope", "threshold", "pass1", "avg_cost", "llm_percent", "n_rows")
SWEEP_CSV_FIELDS = ("threshold", "pass1", "avg_cost", "llm_percent", "n_rows")


class DatasetError(ValueError):
    pass


class LogError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetRecord:
    id: str
    question: str
    gold: str


def load_dataset(path: str | os.PathLike) -> list[DatasetRecord]:
    """Read ``{id, question, answer}`` JSONL, one record per line, order kept."""
    records: list[DatasetRecord] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise DatasetError(f"{path}:{lineno}: expected a JSON object")
            missing = [k for k in ("id", "question", "answer") if k not in obj]
            if missing:
                raise DatasetError(f"{path}:{lineno}: missing field(s) {missing}")
            qid, question, gold = str(obj["id"]), str(obj["question"]), str(obj["answer"])
            if not question.strip() or not gold.strip():
                raise DatasetError(f"{path}:{lineno}: question and answer must be non-empty")
            if qid in seen:
                raise DatasetError(f"{path}:{lineno}: duplicate id {qid!r}")
            seen.add(qid)
            records.append(DatasetRecord(qid, question, gold))
    return records


# --- run log -----------------------------------------------------------------

@dataclass
class RunLogRow:
    question_id: str
    repeat_index: int
    question: str
    gold: str
    slm: Optional[dict]
    llm: Optional[dict]
    router: Optional[dict]
    confidence_used: Optional[float]
    deferred: bool
    final_correct: bool
    costs: CostBreakdown
    fault: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "repeat_index": self.repeat_index,
            "question": self.question,
            "gold": self.gold,
            "slm": self.slm,
            "llm": self.llm,
            "router": self.router,
            "decision": {
                "confidence_used": self.confidence_used,
                "deferred": self.deferred,
                "final_correct": self.final_correct,
            },
            "costs": self.costs.to_dict(),
            "fault": self.fault,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunLogRow":
        dec = d["decision"]
        return cls(
            question_id=str(d["question_id"]),
            repeat_index=int(d["repeat_index"]),
            question=d.get("question", ""),
            gold=d.get("gold", ""),
            slm=d.get("slm"),
            llm=d.get("llm"),
            router=d.get("router"),
            confidence_used=dec.get("confidence_used"),
            deferred=bool(dec["deferred"]),
            final_correct=bool(dec["final_correct"]),
            costs=CostBreakdown.from_dict(d.get("costs") or {}),
            fault=d.get("fault"),
        )


@dataclass
class RunLog:
    header: dict
    rows: list[RunLogRow] = field(default_factory=list)

    @property
    def mode(self) -> str:
        return self.header.get("mode", DIRECT)

    @property
    def record_both(self) -> bool:
        return bool(self.header.get("record_both", False))

    @property
    def cost_config(self) -> CostConfig:
        return CostConfig.from_dict(self.header.get("cost") or {})

    @property
    def policy(self) -> CascadePolicy:
        return CascadePolicy.from_dict(self.header.get("policy") or {})


def make_header(policy: CascadePolicy, cost: CostConfig, repeats: int, seed: int,
                record_both: bool, n_questions: int, **extra) -> dict:
    header = {
        "schema": SCHEMA,
        "version": SCHEMA_VERSION,
        "mode": policy.mode,
        "record_both": record_both,
        "policy": policy.to_dict(),
        "cost": cost.to_dict(),
        "repeats": repeats,
        "seed": seed,
        "n_questions": n_questions,
        "note": TOKENIZER_NOTE,
    }
    header.update(extra)
    return header


def dumps_log(runlog: RunLog) -> str:
    lines = [json.dumps(runlog.header, ensure_ascii=False)]
    lines += [json.dumps(r.to_dict(), ensure_ascii=False) for r in runlog.rows]
    return "\n".join(lines) + "\n"


def write_log(runlog: RunLog, path: str | os.PathLike) -> Path:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_log(runlog), encoding="utf-8")
    return path


def read_log(path: str | os.PathLike) -> RunLog:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip()]
    if not lines:
        raise LogError(f"{path}: empty run log")
    header = json.loads(lines[0])
    if header.get("schema") != SCHEMA:
        raise LogError(f"{path}: not a run log (schema {header.get('schema')!r})")
    if header.get("version") != SCHEMA_VERSION:
        raise LogError(f"{path}: unsupported run log version {header.get('version')!r}")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rows.append(RunLogRow.from_dict(json.loads(line)))
        except (KeyError, ValueError, TypeError) as exc:
            raise LogError(f"{path}:{lineno}: bad row ({exc})") from exc
    return RunLog(header, rows)


def _stage_dict(out: StageOutput, gold: str, verifier: Verifier) -> dict:
    d = out.raw.to_dict()
    if out.parsed is not None:
        d.update(out.parsed.summary())
        d["correct"] = bool(correctness(out.parsed.answer, gold, verifier)) if gold else None
    if out.probability is not None:
        d["probability"] = out.probability
    return d


def row_from_decision(decision: CascadeDecision, question: str, gold: str,
                      verifier: Verifier = default_verifier) -> RunLogRow:
    stages = {name: _stage_dict(getattr(decision, name), gold, verifier) if getattr(decision, name) else None
              for name in ("slm", "llm", "router")}
    answering = stages["llm"] if decision.deferred else stages["slm"]
    return RunLogRow(
        question_id=decision.question_id,
        repeat_index=decision.repeat,
        question=question,
        gold=gold,
        confidence_used=decision.confidence_used,
        deferred=decision.deferred,
        final_correct=bool(answering and answering.get("correct")),
        costs=decision.costs,
        **stages,
    )


def row_from_fault(fault: CascadeFault, qid: str, repeat: int, question: str, gold: str,
                   mode: str, cost: CostConfig, verifier: Verifier = default_verifier) -> RunLogRow:
    stages = {name: _stage_dict(fault.stages[name], gold, verifier) if name in fault.stages else None
              for name in ("slm", "llm", "router")}
    return RunLogRow(
        question_id=qid,
        repeat_index=repeat,
        question=question,
        gold=gold,
        confidence_used=fault.confidence,
        deferred=bool(fault.deferred),
        final_correct=False,
        costs=charged_costs(mode, fault.deferred, fault.stages, cost),
        fault=f"{fault.stage}: {type(fault.cause).__name__}: {fault.cause}",
        **stages,
    )


def run_eval(
    dataset: Sequence[DatasetRecord],
    engine: CascadeEngine,
    repeats: int = 1,
    concurrency: int = 8,
    record_both: bool = True,
    seed: int = 0,
    verifier: Verifier = default_verifier,
    header_extra: Optional[dict] = None,
) -> RunLog:
    """Run every question ``repeats`` times through ``engine``.

    Stage faults become rows with a fault marker and never stop the run.
    Rows come back ordered by (repeat, dataset position) whatever order the
    workers finish in.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    if concurrency < 1:
        raise ValueError("concurrency must be >= 1")
    mode = engine.policy.mode
    jobs = [(r, rec) for r in range(repeats) for rec in dataset]

    def work(job):
        r, rec = job
        try:
            decision = engine.answer(rec.id, rec.question, repeat=r, record_both=record_both)
        except CascadeFault as fault:
            log.warning("question %s repeat %d: %s", rec.id, r, fault)
            return row_from_fault(fault, rec.id, r, rec.question, rec.gold, mode, engine.cost_config, verifier)
        return row_from_decision(decision, rec.question, rec.gold, verifier)

    if concurrency == 1:
        rows = [work(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            rows = list(pool.map(work, jobs))

    header = make_header(engine.policy, engine.cost_config, repeats, seed, record_both, len(dataset),
                         **(header_extra or {}))
    header["check_language"] = engine.check_language
    runlog = RunLog(header, rows)
    n_faults = sum(r.fault is not None for r in rows)
    if n_faults:
        log.warning("%d of %d rows faulted", n_faults, len(rows))
    return runlog


# --- aggregation -------------------------------------------------------------

def _usage(stage: Optional[dict]) -> Optional[TokenUsage]:
    if stage is None:
        return None
    return TokenUsage(int(stage["prompt_tokens"]), int(stage["completion_tokens"]))


def row_cost(row: RunLogRow, mode: str, cost: CostConfig) -> CostBreakdown:
    """Re-price a row from its recorded usages; faulted rows keep their cost."""
    if row.fault is not None:
        return row.costs
    return system_cost(row.deferred, mode, cost, slm=_usage(row.slm), llm=_usage(row.llm), router=_usage(row.router))


@dataclass(frozen=True)
class Totals:
    pass1: float
    avg_cost: float
    llm_percent: float
    n_rows: int

    def to_dict(self, rounded: bool = False) -> dict:
        if not rounded:
            return {"pass1": self.pass1, "avg_cost": self.avg_cost, "llm_percent": self.llm_percent, "n_rows": self.n_rows}
        return {"pass1": round_percent(self.pass1), "avg_cost": round_cost(self.avg_cost),
                "llm_percent": round_percent(self.llm_percent), "n_rows": self.n_rows}


@dataclass
class AggregateReport:
    pass1: float
    avg_cost: float
    llm_percent: float
    n_rows: int
    n_faults: int = 0
    threshold: Optional[float] = None
    calibration: Optional[CalibrationReport] = None
    per_repeat: dict[int, Totals] = field(default_factory=dict)
    llm_only: Optional[Totals] = None

    @property
    def totals(self) -> Totals:
        return Totals(self.pass1, self.avg_cost, self.llm_percent, self.n_rows)

    @property
    def mean_over_repeats(self) -> Optional[Totals]:
        if not self.per_repeat:
            return None
        vals = list(self.per_repeat.values())
        k = len(vals)
        return Totals(sum(v.pass1 for v in vals) / k, sum(v.avg_cost for v in vals) / k,
                      sum(v.llm_percent for v in vals) / k, sum(v.n_rows for v in vals))

    @property
    def cost_change_percent(self) -> Optional[float]:
        """Avg cost against running the LLM alone on the same questions."""
        if self.llm_only is None or self.llm_only.avg_cost == 0:
            return None
        return relative_change(self.avg_cost, self.llm_only.avg_cost)

    @property
    def pass1_delta(self) -> Optional[float]:
        if self.llm_only is None:
            return None
        return self.pass1 - self.llm_only.pass1

    def to_dict(self, rounded: bool = True) -> dict:
        r_pct = round_percent if rounded else (lambda x: x)
        r_cost = round_cost if rounded else (lambda x: x)
        mean = self.mean_over_repeats
        change = self.cost_change_percent
        delta = self.pass1_delta
        return {
            "threshold": self.threshold,
            "pass1": r_pct(self.pass1),
            "avg_cost": r_cost(self.avg_cost),
            "llm_percent": r_pct(self.llm_percent),
            "n_rows": self.n_rows,
            "n_faults": self.n_faults,
            "cost_change_percent": None if change is None else r_pct(change),
            "pass1_delta": None if delta is None else r_pct(delta),
            "llm_only": None if self.llm_only is None else self.llm_only.to_dict(rounded),
            "per_repeat": [dict(repeat=k, **v.to_dict(rounded)) for k, v in sorted(self.per_repeat.items())],
            "mean_over_repeats": None if mean is None else mean.to_dict(rounded),
            "calibration": None if self.calibration is None else _round_calibration(self.calibration.to_dict(), rounded),
        }


def _round_calibration(d: dict, rounded: bool) -> dict:
    if not rounded:
        return d
    out = dict(d)
    for k in ("pass1", "ece", "auroc", "confidence_output_ratio"):
        if out[k] is not None:
            out[k] = round(out[k], 4)
    out["bins"] = [{**b, **{k: round(b[k], 4) for k in ("mean_confidence", "accuracy") if b[k] is not None}}
                   for b in d["bins"]]
    return out


def round_percent(x: float) -> float:
    return float(Decimal(repr(float(x))).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def round_cost(x: float) -> int:
    return int(Decimal(repr(float(x))).quantize(Decimal("1"), rounding=ROUND_HALF_UP))


def _totals(rows: Sequence[RunLogRow], costs: Sequence[CostBreakdown], llm_charged: Sequence[bool]) -> Totals:
    n = len(rows)
    return Totals(
        pass1=100.0 * sum(r.final_correct for r in rows) / n,
        avg_cost=sum(c.total for c in costs) / n,
        llm_percent=100.0 * sum(llm_charged) / n,
        n_rows=n,
    )


def slm_records(runlog: RunLog) -> list[PredictionRecord]:
    return [PredictionRecord(r.confidence_used, bool(r.slm.get("correct"))) for r in runlog.rows if r.slm is not None]


def slm_calibration(runlog: RunLog, n_bins: int = DEFAULT_BINS) -> Optional[CalibrationReport]:
    rows = [r for r in runlog.rows if r.slm is not None]
    if not rows:
        return None
    return calibration_report(
        slm_records(runlog), n_bins,
        macro_flags=[bool(r.slm.get("has_confidence_macro")) for r in rows],
    )


def _llm_only(rows: Sequence[RunLogRow], cost: CostConfig) -> Optional[Totals]:
    if not rows or any(r.llm is None for r in rows):
        return None
    n = len(rows)
    return Totals(
        pass1=100.0 * sum(bool(r.llm.get("correct")) for r in rows) / n,
        avg_cost=sum(llm_cost(*_usage(r.llm), cost) for r in rows) / n,
        llm_percent=100.0,
        n_rows=n,
    )


def aggregate(runlog: RunLog, cost_config: Optional[CostConfig] = None, n_bins: int = DEFAULT_BINS) -> AggregateReport:
    """Pass@1 and LLM% in percent, mean system cost per row.

    Costs are re-derived from the recorded token usage under ``cost_config``
    (the log's own config by default) and rounded only when emitted.
    """
    rows = runlog.rows
    if not rows:
        raise LogError("cannot aggregate an empty run log")
    cost = cost_config or runlog.cost_config
    mode = runlog.mode
    costs = [row_cost(r, mode, cost) for r in rows]
    charged = [r.deferred and (r.fault is None or c.llm_cost > 0) for r, c in zip(rows, costs)]
    overall = _totals(rows, costs, charged)

    by_repeat: dict[int, list[int]] = {}
    for i, r in enumerate(rows):
        by_repeat.setdefault(r.repeat_index, []).append(i)
    per_repeat = {
        k: _totals([rows[i] for i in idx], [costs[i] for i in idx], [charged[i] for i in idx])
        for k, idx in by_repeat.items()
    }
    return AggregateReport(
        pass1=overall.pass1,
        avg_cost=overall.avg_cost,
        llm_percent=overall.llm_percent,
        n_rows=overall.n_rows,
        n_faults=sum(r.fault is not None for r in rows),
        threshold=runlog.policy.threshold if runlog.header.get("policy") else None,
        calibration=slm_calibration(runlog, n_bins),
        per_repeat=per_repeat,
        llm_only=_llm_only(rows, cost),
    )


def standalone(runlog: RunLog, stage: str, cost_config: Optional[CostConfig] = None) -> Totals:
    """Totals as if ``stage`` ("slm" or "llm") answered every row alone,
    charged for that stage only."""
    if stage not in ("slm", "llm"):
        raise ValueError("stage must be 'slm' or 'llm'")
    cost = cost_config or runlog.cost_config
    rows = runlog.rows
    if not rows:
        raise LogError("empty run log")
    if any(getattr(r, stage) is None for r in rows):
        raise LogError(f"log lacks {stage} records on some rows; record-both mode is required")
    price = (lambda u: llm_cost(*u, cost)) if stage == "llm" else (lambda u: slm_or_router_cost(*u, cost))
    n = len(rows)
    return Totals(
        pass1=100.0 * sum(bool(getattr(r, stage).get("correct")) for r in rows) / n,
        avg_cost=sum(price(_usage(getattr(r, stage))) for r in rows) / n,
        llm_percent=100.0 if stage == "llm" else 0.0,
        n_rows=n,
    )


def redecide(runlog: RunLog, threshold: float, cost_config: Optional[CostConfig] = None) -> RunLog:
    """The log as it would have been at ``threshold``, using stored outputs only."""
    check_threshold(threshold)
    cost = cost_config or runlog.cost_config
    mode = runlog.mode
    rows = []
    for r in runlog.rows:
        if r.fault is not None:
            rows.append(r)
            continue
        deferred = decide(r.confidence_used, threshold)
        answering = r.llm if deferred else r.slm
        if answering is None:
            raise LogError(f"row {r.question_id}/{r.repeat_index} lacks the {'llm' if deferred else 'slm'} record")
        rows.append(replace(
            r,
            deferred=deferred,
            final_correct=bool(answering.get("correct")),
            costs=system_cost(deferred, mode, cost, slm=_usage(r.slm), llm=_usage(r.llm), router=_usage(r.router)),
        ))
    header = dict(runlog.header)
    header["policy"] = {**(header.get("policy") or {}), "threshold": threshold}
    return RunLog(header, rows)


def _require_record_both(runlog: RunLog) -> None:
    for r in runlog.rows:
        if r.fault is None and (r.slm is None or r.llm is None):
            raise LogError("sweep needs a record-both log: every row must carry SLM and LLM records")


def sweep(runlog: RunLog, thresholds: Iterable[float], cost_config: Optional[CostConfig] = None,
          n_bins: int = DEFAULT_BINS) -> list[AggregateReport]:
    """Aggregate the log re-decided at every threshold; no backend calls."""
    _require_record_both(runlog)
    return [aggregate(redecide(runlog, t, cost_config), cost_config, n_bins) for t in thresholds]


def threshold_grid(start: float = 0.0, stop: float = 1.1, step: float = 0.1) -> list[float]:
    n = int(round((stop - start) / step))
    return [round(start + i * step, 10) for i in range(n + 1)]


# --- emission ----------------------------------------------------------------

def report_csv(report: AggregateReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_CSV_FIELDS)
    for k, t in sorted(report.per_repeat.items()):
        w.writerow([f"repeat_{k}", report.threshold, round_percent(t.pass1), round_cost(t.avg_cost),
                    round_percent(t.llm_percent), t.n_rows])
    w.writerow(["all", report.threshold, round_percent(report.pass1), round_cost(report.avg_cost),
                round_percent(report.llm_percent), report.n_rows])
    return buf.getvalue()


def sweep_csv(points: Sequence[AggregateReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_CSV_FIELDS)
    for p in points:
        w.writerow([p.threshold, round_percent(p.pass1), round_cost(p.avg_cost), round_percent(p.llm_percent), p.n_rows])
    return buf.getvalue()


def sweep_json(points: Sequence[AggregateReport]) -> str:
    return json.dumps([p.to_dict() for p in points], indent=2) + "\n"


def emit_report(report: AggregateReport | Sequence[AggregateReport], path: str | os.PathLike, fmt: str = "json") -> Path:
    """Write a report (or a list of sweep points) as JSON or CSV.

    Output depends only on the report, so repeated emission is byte-identical.
    """
    sweep_points = not isinstance(report, AggregateReport)
    if fmt == "json":
        text = sweep_json(report) if sweep_points else json.dumps(report.to_dict(), indent=2) + "\n"
    elif fmt == "csv":
        text = sweep_csv(report) if sweep_points else report_csv(report)
    else:
        raise ValueError("format must be 'json' or 'csv'")
    path = Path(path)
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc
    return path


# --- configuration -----------------------------------------------------------

@dataclass
class RunConfig:
    dataset: str
    slm: BackendSpec
    llm: BackendSpec
    policy: CascadePolicy
    cost: CostConfig
    router: Optional[BackendSpec] = None
    repeats: int = 10
    seed: int = 0
    concurrency: int = 8
    record_both: bool = True
    check_language: bool = True
    log_path: str = "runlog.jsonl"
    report_path: Optional[str] = None

    @classmethod
    def from_dict(cls, data: dict, base_dir: str | os.PathLike = ".") -> "RunConfig":
        base = Path(base_dir)

        def resolve(p):
            return str(p if Path(p).is_absolute() else base / p) if p is not None else None

        def spec(d):
            if d is None:
                return None
            d = dict(d)
            if "log_path" in d:
                d["log_path"] = resolve(d["log_path"])
            return BackendSpec.from_dict(d)

        slm, llm, router = spec(data["slm"]), spec(data["llm"]), spec(data.get("router"))
        cost_data = dict(data.get("cost") or {})
        cost_data.setdefault("slm_params", slm.param_count)
        cost_data.setdefault("llm_params", llm.param_count)
        if router is not None:
            cost_data.setdefault("router_params", router.param_count)
        policy = CascadePolicy.from_dict(data.get("policy") or {})
        if policy.source == EXTERNAL_ROUTER and router is None:
            raise ValueError("policy source external_router needs a router backend")
        return cls(
            dataset=resolve(data["dataset"]),
            slm=slm,
            llm=llm,
            router=router,
            policy=policy,
            cost=CostConfig.from_dict(cost_data),
            repeats=int(data.get("repeats", 10)),
            seed=int(data.get("seed", 0)),
            concurrency=int(data.get("concurrency", 8)),
            record_both=bool(data.get("record_both", True)),
            check_language=bool(data.get("check_language", True)),
            log_path=resolve(data.get("log_path", "runlog.jsonl")),
            report_path=resolve(data.get("report_path")),
        )

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        return cls.from_dict(data, base_dir=Path(path).parent)


def build_engine(config: RunConfig, dataset: Sequence[DatasetRecord]) -> CascadeEngine:
    gold = {r.id: r.gold for r in dataset}

    def backend(spec, stage):
        if spec is None:
            return None
        if spec.kind == "scripted":
            return ScriptedBackend(spec, gold=gold, run_seed=config.seed)
        return make_backend(spec, stage=stage)

    return CascadeEngine(
        slm=backend(config.slm, "slm"),
        llm=backend(config.llm, "llm"),
        router=backend(config.router, "router"),
        policy=config.policy,
        cost_config=config.cost,
        check_language=config.check_language,
    )


def run_from_config(config: RunConfig, record_both: Optional[bool] = None) -> RunLog:
    dataset = load_dataset(config.dataset)
    engine = build_engine(config, dataset)
    return run_eval(
        dataset, engine,
        repeats=config.repeats,
        concurrency=config.concurrency,
        record_both=config.record_both if record_both is None else record_both,
        seed=config.seed,
    )


def replay(runlog_path: str | os.PathLike, concurrency: int = 8) -> RunLog:
    """Re-run a recorded log through the cascade with replay backends."""
    original = read_log(runlog_path)
    dataset, seen = [], set()
    for r in original.rows:
        if r.question_id not in seen:
            seen.add(r.question_id)
            dataset.append(DatasetRecord(r.question_id, r.question, r.gold))
    policy = original.policy

    def backend(stage):
        return ReplayBackend(BackendSpec(kind="replay", log_path=str(runlog_path), stage=stage))

    engine = CascadeEngine(
        slm=backend("slm"),
        llm=backend("llm"),
        router=backend("router") if policy.source == EXTERNAL_ROUTER else None,
        policy=policy,
        cost_config=original.cost_config,
        check_language=bool(original.header.get("check_language", True)),
    )
    extra = {k: v for k, v in original.header.items()
             if k not in ("schema", "version", "mode", "record_both", "policy", "cost", "repeats", "seed", "n_questions", "note")}
    return run_eval(dataset, engine,
                    repeats=int(original.header.get("repeats", 1)),
                    concurrency=concurrency,
                    record_both=original.record_both,
                    seed=int(original.header.get("seed", 0)),
                    header_extra=extra)
