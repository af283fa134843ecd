"""Batch experiments: one attack per (image, seed), with summary tables."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .engine import AttackConfig, run_attack
from .image import BoundingBox, load_png, mask_from_bbox, save_png
from .oracle import OracleError, OracleSpec

log = logging.getLogger(__name__)

COLUMNS = (
    "image_id",
    "success",
    "queries",
    "one_minus_ssim",
    "ciede2000",
    "l0",
    "l1",
    "l2",
    "lambda_used",
    "seed",
    "wall_time",
    "error",
)
SCORE_KEYS = ("one_minus_ssim", "ciede2000", "l0", "l1", "l2")


@dataclass
class RunRecord:
    image_id: str
    success: bool
    queries: int
    one_minus_ssim: float | None
    ciede2000: float | None
    l0: float | None
    l1: float | None
    l2: float | None
    lambda_used: float | None
    seed: int
    wall_time: float | None
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


@dataclass
class SummaryStats:
    runs: int
    successes: int
    success_rate: float
    avg_queries: float
    mean_one_minus_ssim: float | None
    mean_ciede2000: float | None
    mean_l0: float | None
    mean_l1: float | None
    mean_l2: float | None
    errors: int = 0


@dataclass
class ExperimentConfig:
    """What to attack and how.

    ``images`` holds file paths or ``(image_id, ImageTensor)`` pairs. ``oracle``
    is an :class:`OracleSpec` or an already-open oracle object. ``masks`` is
    either one box for every image or a mapping from image id to box.
    """

    images: list
    oracle: object
    attack: AttackConfig = field(default_factory=AttackConfig)
    seeds: tuple[int, ...] = (0,)
    masks: BoundingBox | dict | None = None
    out_csv: Path | None = None
    out_json: Path | None = None
    adv_dir: Path | None = None
    trace_dir: Path | None = None
    record_wall_time: bool = True
    workers: int = 1

    def __post_init__(self):
        if not self.images:
            raise ValueError("experiment needs at least one image")
        if not self.seeds:
            raise ValueError("experiment needs at least one seed")


def image_id_of(item) -> str:
    if isinstance(item, tuple):
        return str(item[0])
    return Path(item).name


def attack_seed(seed: int, image_id: str) -> int:
    """Per-image generator seed; paired across experiments sharing ``seed``."""
    return (seed * 1_000_003 + zlib.crc32(image_id.encode())) % (2**63)


def _box_for(masks, image_id):
    if masks is None or isinstance(masks, BoundingBox):
        return masks
    return masks.get(image_id)


def _error_record(image_id, seed, message) -> RunRecord:
    return RunRecord(image_id, False, 0, None, None, None, None, None, None, seed, None, message)


def _attack_one(item, seed, attack: AttackConfig, masks, oracle, timed: bool):
    image_id = image_id_of(item)
    try:
        x = item[1] if isinstance(item, tuple) else load_png(item)
        box = _box_for(masks, image_id)
        mask = None if box is None else mask_from_bbox(box, x.height, x.width)
        config = replace(attack, seed=attack_seed(seed, image_id), mask=mask)
        start = time.perf_counter()
        result = run_attack(config, x, oracle)
        elapsed = time.perf_counter() - start
    except (OSError, ValueError, OracleError) as exc:
        log.warning("skipping %s (seed %d): %s", image_id, seed, exc)
        return _error_record(image_id, seed, f"{type(exc).__name__}: {exc}"), None
    s = result.scores
    record = RunRecord(
        image_id=image_id,
        success=result.success,
        queries=result.queries_used,
        one_minus_ssim=s["one_minus_ssim"],
        ciede2000=s["ciede2000"],
        l0=s["l0"],
        l1=s["l1"],
        l2=s["l2"],
        lambda_used=result.lambda_used,
        seed=seed,
        wall_time=elapsed if timed else None,
    )
    return record, result


def _worker(args):
    item, seed, attack, masks, spec, timed = args
    oracle = spec.open()
    try:
        return _attack_one(item, seed, attack, masks, oracle, timed)
    finally:
        oracle.close()


def run_batch(config: ExperimentConfig, keep_results: bool = False):
    """Attack every (image, seed) pair; returns ``(records, stats)``.

    With ``keep_results`` the full :class:`AttackResult` objects are returned
    as a third element (``None`` for error rows). Records come back sorted by
    image id, then seed, whatever the worker scheduling.
    """
    items = sorted(config.images, key=image_id_of)
    tasks = [(item, seed) for item in items for seed in sorted(config.seeds)]
    timed = config.record_wall_time

    if config.workers > 1 and isinstance(config.oracle, OracleSpec):
        with ProcessPoolExecutor(config.workers) as pool:
            outputs = list(
                pool.map(
                    _worker,
                    [(it, s, config.attack, config.masks, config.oracle, timed) for it, s in tasks],
                )
            )
    else:
        own = isinstance(config.oracle, OracleSpec)
        oracle = config.oracle.open() if own else config.oracle
        try:
            outputs = [
                _attack_one(it, s, config.attack, config.masks, oracle, timed) for it, s in tasks
            ]
        finally:
            if own:
                oracle.close()

    records = [r for r, _ in outputs]
    results = [res for _, res in outputs]
    stats = summarize(records)
    emit_outputs(
        records, stats, config.out_csv, config.out_json, config.adv_dir, config.trace_dir, results
    )
    if keep_results:
        return records, stats, results
    return records, stats


def _mean(values):
    values = [v for v in values if v is not None and not math.isnan(v)]
    return sum(values) / len(values) if values else None


def summarize(records) -> SummaryStats:
    """Success rate and mean queries over all runs; distortion over successes only."""
    if not records:
        raise ValueError("no records to summarise")
    runs = [r for r in records if r.ok]
    errors = len(records) - len(runs)
    if not runs:
        return SummaryStats(0, 0, 0.0, math.nan, None, None, None, None, None, errors)
    wins = [r for r in runs if r.success]
    return SummaryStats(
        runs=len(runs),
        successes=len(wins),
        success_rate=len(wins) / len(runs),
        avg_queries=sum(r.queries for r in runs) / len(runs),
        mean_one_minus_ssim=_mean(r.one_minus_ssim for r in wins),
        mean_ciede2000=_mean(r.ciede2000 for r in wins),
        mean_l0=_mean(r.l0 for r in wins),
        mean_l1=_mean(r.l1 for r in wins),
        mean_l2=_mean(r.l2 for r in wins),
        errors=errors,
    )


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def records_to_csv(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for r in records:
        writer.writerow([_cell(getattr(r, c)) for c in COLUMNS])
    return buf.getvalue()


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _write(path, writer):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        writer(path)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def run_name(record: RunRecord) -> str:
    return f"{Path(record.image_id).stem}_s{record.seed}"


def emit_outputs(records, stats, out_csv=None, out_json=None, adv_dir=None,
                 trace_dir=None, results=None) -> None:
    """Write the CSV, the JSON summary, and optional PNGs and trace files."""
    if out_csv is not None:
        text = records_to_csv(records)
        _write(Path(out_csv), lambda p: p.write_text(text, encoding="utf-8"))
    if out_json is not None:
        summary = asdict(stats)
        if math.isnan(summary["avg_queries"]):
            summary["avg_queries"] = None
        payload = json.dumps(summary, indent=2, sort_keys=True)
        _write(Path(out_json), lambda p: p.write_text(payload + "\n", encoding="utf-8"))
    if results is None:
        return
    for record, result in zip(records, results):
        if result is None:
            continue
        if adv_dir is not None:
            _write(Path(adv_dir) / f"{run_name(record)}.png",
                   lambda p: save_png(result.adversarial, p))
        if trace_dir is not None:
            lines = "".join(f"{v!r}\n" for v in result.trace)
            _write(Path(trace_dir) / f"{run_name(record)}.trace",
                   lambda p: p.write_text(lines, encoding="utf-8"))
