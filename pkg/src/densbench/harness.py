"""Experiment orchestration: plans, cells, summary tables, curve export,
and the critic diagnostic report.

A plan is a JSON document naming datasets, model entries (each a WGAN or flow
config), and seeds. Every (model, dataset, seed) cell trains once and writes
an immutable TrialRecord plus a density-curve CSV into its own directory; the
summary table aggregates the median best-W1 per (model, dataset) with its
min/max spread. Cells that fail are reported as FAILED without stopping the
run. Workers are capped by DENSBENCH_WORKERS (default 1).
"""

import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .metrics import KdeConfig, kde_bandwidth, kde_evaluate
from .records import TrialRecord
from .rng import make_rng
from .synthdata import DatasetHandle, load_spec, spec_from_dict

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ModelEntry:
    name: str
    kind: str          # "wgan" | "gf"
    config: dict

    def __post_init__(self):
        if self.kind not in ("wgan", "gf"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        # validate eagerly: a bad config must fail before any training starts
        if self.kind == "wgan":
            from .wgan import WganConfig
            WganConfig.from_dict(self.config)
        else:
            from .gaussflow import GfConfig
            GfConfig(**self.config)


@dataclass(frozen=True)
class ExperimentPlan:
    datasets: tuple          # (name, spec_dict) pairs
    models: tuple            # ModelEntry
    seeds: tuple
    out_dir: str
    eval_samples: int = 100_000
    density_grid: int = 512

    @classmethod
    def from_dict(cls, doc, base_dir="."):
        datasets = []
        raw = doc.get("datasets", doc.get("dataset"))
        if raw is None:
            raise ValueError("plan needs a 'datasets' entry")
        if isinstance(raw, (str, dict)):
            raw = [raw]
        for item in raw:
            if isinstance(item, str):
                spec = load_spec(item if item in ("unimodal", "multimodal")
                                 else os.path.join(base_dir, item))
                datasets.append((item if isinstance(item, str) else "dataset",
                                 spec.to_dict()))
            else:
                datasets.append((item.get("name", item.get("kind", "dataset")),
                                 spec_from_dict(item).to_dict()))
        models = tuple(
            ModelEntry(m["name"], m["kind"], m["config"]) for m in doc["models"])
        names = [m.name for m in models]
        if len(set(names)) != len(names):
            raise ValueError("duplicate model names in plan")
        return cls(
            datasets=tuple(datasets),
            models=models,
            seeds=tuple(int(s) for s in doc.get("seeds", [0])),
            out_dir=doc.get("out_dir", "bench_out"),
            eval_samples=int(doc.get("eval_samples", 100_000)),
            density_grid=int(doc.get("density_grid", 512)),
        )

    @classmethod
    def load(cls, path):
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), base_dir=path.parent)


# -- cell execution --------------------------------------------------------


def _cell_dir(out_dir, model_name, dataset_name, seed):
    return Path(out_dir) / "cells" / f"{model_name}__{dataset_name}__seed{seed}"


def run_cell(entry_doc, dataset_name, dataset_spec_doc, seed, out_dir,
             eval_samples, density_grid):
    """Train one (model, dataset, seed) cell; returns the record path."""
    from .gaussflow import GfConfig
    from .gaussflow import train as gf_train
    from .wgan import WganConfig
    from .wgan import train as wgan_train

    entry = ModelEntry(**entry_doc)
    cell = _cell_dir(out_dir, entry.name, dataset_name, seed)
    cell.mkdir(parents=True, exist_ok=True)
    spec = spec_from_dict(dataset_spec_doc)
    data = DatasetHandle(spec, seed)

    if entry.kind == "wgan":
        config = WganConfig.from_dict({**entry.config,
                                       "eval_samples": eval_samples})
        state, record = wgan_train(config, data, seed=seed)
        ckpt = {
            "schema_version": SCHEMA_VERSION, "kind": "wgan",
            "config": config.to_dict(), "dataset": dataset_spec_doc,
            "generator": (state.best_generator or state.generator).to_doc(),
            "critic": (state.best_critic or state.critic).to_doc(),
        }
    else:
        config = GfConfig(**{**entry.config, "eval_samples": eval_samples})
        model, record = gf_train(config, data, seed=seed)
        ckpt = {"schema_version": SCHEMA_VERSION, "kind": "gf",
                "config": config.to_dict(), "dataset": dataset_spec_doc,
                "model": model.to_doc()}

    ckpt_path = cell / "checkpoint.json"
    ckpt_path.write_text(json.dumps(ckpt, sort_keys=True))
    record.checkpoint_path = str(ckpt_path)

    csv_path = cell / "density.csv"
    try:
        write_density_curve(ckpt, spec, csv_path, density_grid,
                            eval_samples=eval_samples, seed=seed)
        record.density_csv_path = str(csv_path)
    except Exception:
        if record.failure is None:
            raise
        # a diverged trial may have no usable checkpoint; keep the record
    record_path = cell / "record.json"
    record.save(record_path)
    return str(record_path)


# -- density curves ---------------------------------------------------------


def dataset_grid(spec, grid_count):
    """Uniform grid over the dataset support padded by 10% of its span."""
    lo, hi = spec.support()
    pad = 0.05 * (hi - lo)
    return np.linspace(lo - pad, hi + pad, grid_count)


def model_density_curve(ckpt_doc, spec, grid, eval_samples=100_000, seed=0):
    """Density of a checkpointed model on `grid`.

    Flows are scored exactly; WGAN generators are sampled and passed through
    the count-calibrated KDE.
    """
    if ckpt_doc["kind"] == "gf":
        from .gaussflow import GaussFlowModel
        model = GaussFlowModel.from_doc(ckpt_doc["model"])
        return np.exp(model.log_density(grid))
    from .wgan import TrainState, WganConfig
    from .diffnet.net import DenseNet
    config = WganConfig.from_dict(ckpt_doc["config"])
    state = TrainState.fresh(config, seed=seed)
    state.generator = DenseNet.from_doc(ckpt_doc["generator"])
    samples = state.sample_generator(eval_samples, make_rng(seed, 8))
    h = kde_bandwidth(samples, KdeConfig())
    return kde_evaluate(samples, h, grid)


def write_density_curve(ckpt_doc, spec, csv_path, grid_count,
                        eval_samples=100_000, seed=0):
    grid = dataset_grid(spec, grid_count)
    dens = model_density_curve(ckpt_doc, spec, grid,
                               eval_samples=eval_samples, seed=seed)
    _write_curve_csv(csv_path, grid, dens)


def write_truth_curve(spec, csv_path, grid_count):
    grid = dataset_grid(spec, grid_count)
    _write_curve_csv(csv_path, grid, spec.pdf(grid))


def _write_curve_csv(path, grid, dens):
    with open(path, "w") as fh:
        fh.write("t,density\n")
        for t, d in zip(grid, dens):
            fh.write(f"{float(t)!r},{float(d)!r}\n")


def export_density_curves(record_paths, out_dir, grid_count=512):
    """Re-export density curves (plus one ground-truth curve per dataset seen)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seen_specs = {}
    written = []
    for rp in record_paths:
        record = TrialRecord.load(rp)
        if not record.checkpoint_path or not Path(record.checkpoint_path).exists():
            raise FileNotFoundError(f"record {rp} has no checkpoint")
        ckpt = json.loads(Path(record.checkpoint_path).read_text())
        spec_doc = ckpt.get("dataset")
        if spec_doc is None:
            # cell layout: dataset name is embedded in the directory name
            spec_doc = _spec_doc_for_record(rp)
        spec = spec_from_dict(spec_doc)
        name = Path(rp).parent.name
        csv_path = out_dir / f"{name}.csv"
        write_density_curve(ckpt, spec, csv_path, grid_count, seed=record.seed)
        written.append(str(csv_path))
        key = json.dumps(spec_doc, sort_keys=True)
        if key not in seen_specs:
            truth_path = out_dir / f"truth_{spec_doc.get('kind', 'data')}.csv"
            write_truth_curve(spec, truth_path, grid_count)
            seen_specs[key] = str(truth_path)
            written.append(str(truth_path))
    return written


def _spec_doc_for_record(record_path):
    name = Path(record_path).parent.name
    for key in ("unimodal", "multimodal"):
        if f"__{key}__" in name:
            return load_spec(key).to_dict()
    raise ValueError(f"cannot infer dataset for record {record_path}")


# -- mode detection -----------------------------------------------------------


def find_modes(grid, density, rel_prominence=0.05):
    """Locations of local maxima whose topographic prominence exceeds
    rel_prominence * max(density). Filters float-level ripples."""
    density = np.asarray(density, dtype=np.float64)
    grid = np.asarray(grid, dtype=np.float64)
    peaks = [i for i in range(1, density.size - 1)
             if density[i] > density[i - 1] and density[i] >= density[i + 1]]
    threshold = rel_prominence * float(density.max())
    modes = []
    for i in peaks:
        height = density[i]
        saddles = []
        for step in (-1, 1):
            j = i
            low = height
            while 0 <= j < density.size and density[j] <= height:
                low = min(low, density[j])
                j += step
            saddles.append(low if 0 <= j < density.size else float(density.min()))
        prominence = height - max(saddles)
        if prominence >= threshold:
            modes.append(float(grid[i]))
    return modes


# -- critic diagnostic --------------------------------------------------------


def diagnose_critic(record):
    """Ratio/sign report of critic-estimated vs direct W1 over a trial history.

    Flags eval points where the critic estimate is negative or below one tenth
    of the direct estimate.
    """
    if record.kind != "wgan":
        raise ValueError(f"diagnose_critic needs a wgan record, got {record.kind!r}")
    rows = []
    for h in record.history:
        true_w1 = h["true_w1"]
        critic_w1 = h.get("critic_w1")
        if true_w1 is None or critic_w1 is None:
            continue
        ratio = critic_w1 / true_w1 if true_w1 > 0 else math.inf
        flags = []
        if critic_w1 < 0:
            flags.append("negative critic estimate")
        if critic_w1 < 0.1 * true_w1:
            flags.append("severe underestimate")
        rows.append({"step": h["step"], "true_w1": true_w1,
                     "critic_w1": critic_w1, "ratio": ratio,
                     "sign": int(np.sign(critic_w1)), "flags": flags})
    ratios = [r["ratio"] for r in rows if math.isfinite(r["ratio"])]
    return {
        "rows": rows,
        "eval_points": len(rows),
        "flagged": sum(1 for r in rows if r["flags"]),
        "median_ratio": float(np.median(ratios)) if ratios else None,
    }


# -- plan runner --------------------------------------------------------------


def run(plan):
    """Execute all plan cells; returns (summary, table_text).

    Summary maps (model, dataset) -> {"median": .., "min": .., "max": ..,
    "failed": .., "cells": [...paths]}; cells whose every seed failed get
    median None and render as FAILED.
    """
    out_dir = Path(plan.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    workers = int(os.environ.get("DENSBENCH_WORKERS", "1"))
    jobs = []
    for entry in plan.models:
        for ds_name, ds_doc in plan.datasets:
            for seed in plan.seeds:
                jobs.append((entry, ds_name, ds_doc, seed))

    t0 = time.time()
    record_paths = {}
    if workers <= 1:
        for entry, ds_name, ds_doc, seed in jobs:
            record_paths[(entry.name, ds_name, seed)] = _safe_cell(
                entry, ds_name, ds_doc, seed, plan)
    else:
        from dataclasses import asdict
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = {
                pool.submit(run_cell, asdict(entry), ds_name, ds_doc, seed,
                            plan.out_dir, plan.eval_samples, plan.density_grid):
                (entry.name, ds_name, seed)
                for entry, ds_name, ds_doc, seed in jobs
            }
            for fut, key in futs.items():
                try:
                    record_paths[key] = fut.result()
                except Exception as exc:
                    record_paths[key] = _failure_record(*key, plan, exc)

    summary = {}
    for entry in plan.models:
        for ds_name, _ in plan.datasets:
            vals = []
            cells = []
            failed = 0
            for seed in plan.seeds:
                rp = record_paths[(entry.name, ds_name, seed)]
                cells.append(rp)
                rec = TrialRecord.load(rp)
                if rec.failed or rec.best_w1 is None:
                    failed += 1
                else:
                    vals.append(rec.best_w1)
            summary[(entry.name, ds_name)] = {
                "median": float(np.median(vals)) if vals else None,
                "min": min(vals) if vals else None,
                "max": max(vals) if vals else None,
                "failed": failed,
                "cells": cells,
            }

    table = _format_table(plan, summary)
    (out_dir / "summary.csv").write_text(_format_csv(plan, summary))
    (out_dir / "summary.txt").write_text(table)
    (out_dir / "summary.json").write_text(json.dumps(
        {f"{m}::{d}": {k: v for k, v in cell.items() if k != "cells"}
         for (m, d), cell in summary.items()}, indent=2, sort_keys=True) + "\n")
    return summary, table


def _safe_cell(entry, ds_name, ds_doc, seed, plan):
    from dataclasses import asdict
    try:
        return run_cell(asdict(entry), ds_name, ds_doc, seed, plan.out_dir,
                        plan.eval_samples, plan.density_grid)
    except Exception as exc:
        return _failure_record(entry.name, ds_name, seed, plan, exc)


def _failure_record(model_name, ds_name, seed, plan, exc):
    cell = _cell_dir(plan.out_dir, model_name, ds_name, seed)
    cell.mkdir(parents=True, exist_ok=True)
    entry = next(m for m in plan.models if m.name == model_name)
    record = TrialRecord(kind=entry.kind, config=entry.config, seed=seed,
                         failure=f"cell error: {exc}")
    path = cell / "record.json"
    record.save(path)
    return str(path)


def _cell_text(cell):
    if cell["median"] is None:
        return "FAILED"
    extra = f" (n_fail={cell['failed']})" if cell["failed"] else ""
    return f"{cell['median']:.4f} [{cell['min']:.4f}, {cell['max']:.4f}]{extra}"


def _format_table(plan, summary):
    ds_names = [d for d, _ in plan.datasets]
    rows = [["model"] + ds_names]
    for entry in plan.models:
        rows.append([entry.name] + [
            _cell_text(summary[(entry.name, d)]) for d in ds_names])
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for r in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
    return "\n".join(lines) + "\n"


def _format_csv(plan, summary):
    ds_names = [d for d, _ in plan.datasets]
    lines = ["model," + ",".join(ds_names)]
    for entry in plan.models:
        cells = []
        for d in ds_names:
            cell = summary[(entry.name, d)]
            cells.append("FAILED" if cell["median"] is None else repr(cell["median"]))
        lines.append(entry.name + "," + ",".join(cells))
    return "\n".join(lines) + "\n"
