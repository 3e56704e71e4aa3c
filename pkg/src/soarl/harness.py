"""Experiment protocols, metrics export and run summaries."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import statistics
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .annotator import make_backend
from .config import ExperimentConfig, dump_config, library_path
from .constraints import LimitationSet, build_limitation_set
from .controller import EpisodeTrace, MetaController
from .officeworld import entity_registry, read_map, task
from .skills import SkillLibrary, load_library, save_library

log = logging.getLogger(__name__)

INCOMPLETE_MARKER = "INCOMPLETE"


@dataclass
class MetricsRow:
    episode: int
    samples: int
    episode_return: float
    success: int
    violations: int
    plan_length: int
    library_size: int
    option_sr: str
    violation_step: Optional[int] = None


METRICS_COLUMNS = tuple(f.name for f in fields(MetricsRow))


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else str(v)


def format_sr(controller: MetaController) -> str:
    return ";".join(f"{k}={o.success_rate:.4f}" for k, o in controller.options.items())


class MetricsWriter:
    def __init__(self, path):
        self.fh = open(path, "w", encoding="utf-8", newline="")
        self.writer = csv.writer(self.fh, lineterminator="\n")
        self.writer.writerow(METRICS_COLUMNS)

    def write(self, row: MetricsRow) -> None:
        self.writer.writerow([_fmt(v) for v in asdict(row).values()])

    def close(self) -> None:
        self.fh.close()


@dataclass
class PhaseResult:
    seed: int
    phase: int
    task: int
    directory: Path
    rows: list
    controller: MetaController

    @property
    def samples_to_criterion(self) -> Optional[int]:
        return samples_to_criterion(self.rows)


def samples_to_criterion(rows: Sequence[MetricsRow], window: int = 50, threshold: float = 0.95) -> Optional[int]:
    """Cumulative samples at the first episode whose trailing ``window`` success rate reaches ``threshold``."""
    succ = [int(r.success) for r in rows]
    run = 0
    for i, s in enumerate(succ):
        run += s
        if i >= window:
            run -= succ[i - window]
        if i + 1 >= window and run / window >= threshold:
            return int(rows[i].samples)
    return None


def make_annotator(cfg: ExperimentConfig, seed: int):
    return make_backend(cfg.annotator, cfg.annotator_endpoint, cfg.annotator_model, cfg.annotator_timeout,
                        cfg.annotator_retries, cfg.annotator_fault_rate, seed)


def run_phase(cfg: ExperimentConfig, seed: int, phase: int, task_id: int, library: SkillLibrary,
              annotator, lim: LimitationSet, out_dir: Path) -> PhaseResult:
    grid = read_map(cfg.map)
    out_dir.mkdir(parents=True, exist_ok=True)
    controller = MetaController(grid, task(task_id), cfg.controller_config(), annotator, library, lim,
                                seed=[seed, phase], world_id=grid.name, backend=cfg.backend)
    rows: list[MetricsRow] = []
    writer = MetricsWriter(out_dir / "metrics.csv")
    events = open(out_dir / "events.jsonl", "w", encoding="utf-8")
    samples = violations = 0
    try:
        for ep in range(1, cfg.episodes + 1):
            trace: EpisodeTrace = controller.run_episode()
            samples += trace.steps
            violations += int(trace.violated)
            row = MetricsRow(ep, samples, trace.episode_return, int(trace.success), violations,
                             len(trace.plan), len(library), format_sr(controller), trace.violation_step)
            rows.append(row)
            writer.write(row)
            for ev in trace.events:
                events.write(json.dumps(ev, sort_keys=True) + "\n")
    finally:
        writer.close()
        events.close()
    with open(out_dir / "checkpoint.json", "w", encoding="utf-8") as fh:
        json.dump(controller.checkpoint(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    return PhaseResult(seed, phase, task_id, out_dir, rows, controller)


def run_seed(cfg: ExperimentConfig, seed: int, out: Path) -> list[PhaseResult]:
    seed_dir = out / f"seed_{seed}"
    seed_dir.mkdir(parents=True, exist_ok=True)
    annotator = make_annotator(cfg, seed)
    grid = read_map(cfg.map)
    lim = build_limitation_set(cfg.constraint, annotator, entity_registry(grid))
    if cfg.protocol == "transfer":
        library = load_library(library_path(cfg.library_in, seed, len(cfg.seeds)))
        log.info("seed %d: loaded %d skills", seed, len(library))
    else:
        library = SkillLibrary(cfg.tau)
    results = []
    for k, task_id in enumerate(cfg.phases()):
        phase_dir = seed_dir / f"phase_{k}_task_{task_id}"
        results.append(run_phase(cfg, seed, k, task_id, library, annotator, lim, phase_dir))
        log.info("seed %d task %d: samples to criterion %s", seed, task_id, results[-1].samples_to_criterion)
    save_library(library, seed_dir / "library.json")
    if cfg.library_out:
        dest = Path(library_path(cfg.library_out, seed, len(cfg.seeds)))
        dest.parent.mkdir(parents=True, exist_ok=True)
        save_library(library, dest)
    return results


def run_experiment(cfg: ExperimentConfig) -> Path:
    """Run every seed of ``cfg`` and return the output directory."""
    cfg.validate()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / INCOMPLETE_MARKER
    dump_config(cfg, out / "config.json")
    marker.write_text("run in progress\n")
    try:
        for seed in cfg.seeds:
            run_seed(cfg, seed, out)
    except BaseException as e:
        marker.write_text(f"aborted: {e.__class__.__name__}: {e}\n")
        raise
    marker.unlink()
    return out


# -- summaries --------------------------------------------------------------

class SummaryError(ValueError):
    pass


def read_metrics(path) -> list[MetricsRow]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != METRICS_COLUMNS:
            raise SummaryError(f"{path}: unexpected metrics header {header}")
        rows = [MetricsRow(int(r[0]), int(r[1]), float(r[2]), int(r[3]), int(r[4]), int(r[5]), int(r[6]), r[7],
                           int(r[8]) if r[8] else None)
                for r in reader]
    for prev, cur in zip(rows, rows[1:]):
        if cur.samples < prev.samples or cur.violations < prev.violations:
            raise SummaryError(f"{path}: cumulative column decreases at episode {cur.episode}")
    return rows


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    if not values:
        return math.nan, math.nan
    if len(values) == 1:
        return float(values[0]), 0.0
    return statistics.fmean(values), statistics.stdev(values)


def summarize(run_dirs: Iterable, window: int = 50) -> list[dict]:
    """Per (protocol, map, final task) group: mean and stddev over seeds of samples-to-criterion,
    total violations and final return (mean return over the last ``window`` episodes).
    Statistics use the final phase of each seed."""
    run_dirs = [Path(d) for d in run_dirs]
    if not run_dirs:
        raise SummaryError("no run directories given")
    groups: dict[tuple, dict[str, list]] = {}
    for d in run_dirs:
        cfg_path = d / "config.json"
        if not cfg_path.is_file():
            raise SummaryError(f"{d} is not a run directory (no config.json)")
        if (d / INCOMPLETE_MARKER).exists():
            raise SummaryError(f"{d} holds an incomplete run")
        cfg = json.loads(cfg_path.read_text(encoding="utf-8"))
        for seed_dir in sorted(d.glob("seed_*")):
            phases = sorted(seed_dir.glob("phase_*_task_*"), key=lambda p: int(p.name.split("_")[1]))
            if not phases:
                continue
            rows = read_metrics(phases[-1] / "metrics.csv")
            if not rows:
                continue
            key = (cfg["protocol"], Path(cfg["map"]).stem, phases[-1].name.rsplit("_", 1)[1])
            g = groups.setdefault(key, {"stc": [], "violations": [], "final_return": [], "unreached": 0})
            stc = samples_to_criterion(rows, cfg.get("criterion_window", 50), cfg.get("criterion_threshold", 0.95))
            if stc is None:
                g["unreached"] += 1
            else:
                g["stc"].append(stc)
            g["violations"].append(rows[-1].violations)
            g["final_return"].append(statistics.fmean(r.episode_return for r in rows[-window:]))
    if not groups:
        raise SummaryError("no completed seeds found")
    out = []
    for (protocol, map_name, task_id), g in sorted(groups.items()):
        n = len(g["violations"])
        stc_m, stc_s = _mean_std(g["stc"])
        v_m, v_s = _mean_std(g["violations"])
        r_m, r_s = _mean_std(g["final_return"])
        out.append({"protocol": protocol, "map": map_name, "task": int(task_id), "seeds": n,
                    "samples_to_criterion_mean": stc_m, "samples_to_criterion_std": stc_s,
                    "criterion_unreached": g["unreached"], "violations_mean": v_m, "violations_std": v_s,
                    "final_return_mean": r_m, "final_return_std": r_s})
    return out


SUMMARY_COLUMNS = ("protocol", "map", "task", "seeds", "samples_to_criterion_mean", "samples_to_criterion_std",
                   "criterion_unreached", "violations_mean", "violations_std", "final_return_mean",
                   "final_return_std")


def summary_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, SUMMARY_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def summary_table(rows: Sequence[dict]) -> str:
    head = f"{'protocol':<11} {'map':<15} {'task':>4} {'seeds':>5}  {'samples-to-criterion':>24}  " \
           f"{'violations':>16}  {'final return':>16}"
    lines = [head, "-" * len(head)]
    for r in rows:
        stc = f"{r['samples_to_criterion_mean']:.0f} ± {r['samples_to_criterion_std']:.0f}"
        if r["criterion_unreached"]:
            stc += f" ({r['criterion_unreached']} unreached)"
        lines.append(
            f"{r['protocol']:<11} {r['map']:<15} {r['task']:>4} {r['seeds']:>5}  {stc:>24}  "
            f"{r['violations_mean']:>7.1f} ± {r['violations_std']:<6.1f}  "
            f"{r['final_return_mean']:>7.3f} ± {r['final_return_std']:<6.3f}")
    return "\n".join(lines)
