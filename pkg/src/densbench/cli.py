"""densbench command line.

Verbs: data, metrics w1|kde, train wgan|gf, search [top], run, export,
diagnose. Exit codes: 0 success, 1 validation error (bad arguments, configs,
or input files), 2 runtime failure with partial results preserved.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np


class ValidationError(Exception):
    pass


def _read_samples(path):
    try:
        arr = np.loadtxt(path, dtype=np.float64, ndmin=1)
    except (OSError, ValueError) as exc:
        raise ValidationError(f"cannot read samples from {path}: {exc}") from exc
    if arr.ndim != 1:
        raise ValidationError(f"{path} must hold one number per line")
    return arr


def _load_json(path, what):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read {what} {path}: {exc}") from exc


def _load_dataset(ref):
    from .synthdata import load_spec
    try:
        return load_spec(ref)
    except (OSError, ValueError, TypeError) as exc:
        raise ValidationError(f"bad dataset spec {ref!r}: {exc}") from exc


def cmd_data(args):
    from .synthdata import DatasetHandle
    spec = _load_dataset(args.spec)
    handle = DatasetHandle(spec, args.seed)
    samples = handle.sample(args.n)
    out = Path(args.out)
    with open(out, "w") as fh:
        for v in samples:
            fh.write(f"{float(v)!r}\n")
    print(f"wrote {samples.size} samples to {out}")
    return 0


def cmd_metrics_w1(args):
    from .metrics import w1_direct
    a = _read_samples(args.a)
    b = _read_samples(args.b)
    print(repr(w1_direct(a, b)))
    return 0


def cmd_metrics_kde(args):
    from .metrics import KdeConfig, kde_curve
    samples = _read_samples(args.infile)
    config = KdeConfig(sample_size=max(samples.size, 1),
                       target_band_count=min(args.band_count, samples.size),
                       eval_grid=args.grid)
    grid, dens, h = kde_curve(samples, config)
    with open(args.out, "w") as fh:
        fh.write("t,density\n")
        for t, d in zip(grid, dens):
            fh.write(f"{float(t)!r},{float(d)!r}\n")
    print(f"bandwidth {h!r}; wrote {len(grid)} rows to {args.out}")
    return 0


def _train_out(args, record, extra_doc):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / "checkpoint.json"
    ckpt_path.write_text(json.dumps(extra_doc, sort_keys=True))
    record.checkpoint_path = str(ckpt_path)
    from .harness import write_density_curve
    from .synthdata import spec_from_dict
    spec = spec_from_dict(extra_doc["dataset"])
    csv_path = out / "density.csv"
    try:
        write_density_curve(extra_doc, spec, csv_path, args.grid, seed=record.seed)
        record.density_csv_path = str(csv_path)
    except Exception as exc:
        if record.failure is None:
            raise
        print(f"note: no density curve for failed trial ({exc})", file=sys.stderr)
    record.save(out / "record.json")
    print(f"best W1 {record.best_w1!r}  failure={record.failure!r}  -> {out}")
    return 2 if record.failure else 0


def cmd_train_wgan(args):
    from .synthdata import DatasetHandle
    from .wgan import WganConfig, train
    spec = _load_dataset(args.data)
    try:
        config = WganConfig.from_dict(_load_json(args.config, "config"))
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"bad wgan config: {exc}") from exc
    data = DatasetHandle(spec, args.seed)
    state, record = train(config, data, seed=args.seed)
    doc = {"schema_version": 1, "kind": "wgan", "config": config.to_dict(),
           "dataset": spec.to_dict(),
           "generator": (state.best_generator or state.generator).to_doc(),
           "critic": (state.best_critic or state.critic).to_doc()}
    return _train_out(args, record, doc)


def cmd_train_gf(args):
    from .gaussflow import GfConfig, train
    from .synthdata import DatasetHandle
    spec = _load_dataset(args.data)
    try:
        config = GfConfig(**_load_json(args.config, "config"))
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"bad gf config: {exc}") from exc
    data = DatasetHandle(spec, args.seed)
    model, record = train(config, data, seed=args.seed)
    doc = {"schema_version": 1, "kind": "gf", "config": config.to_dict(),
           "dataset": spec.to_dict(), "model": model.to_doc()}
    return _train_out(args, record, doc)


def cmd_search(args):
    from functools import partial

    from .hypersearch import (AshaSchedule, SearchSpace, asha_run,
                              wgan_objective)
    spec = _load_dataset(args.data)
    space = SearchSpace()
    if args.space:
        try:
            space = SearchSpace.from_dict(_load_json(args.space, "search space"))
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"bad search space: {exc}") from exc
    schedule = AshaSchedule(min_budget=args.min_budget,
                            max_budget=args.max_budget, eta=args.eta)
    objective = partial(wgan_objective, dataset_spec=spec.to_dict())
    results = asha_run(space, schedule, args.trials, objective,
                       workers=args.workers, seed=args.seed,
                       out_dir=args.out, resume=args.resume)
    ok = [r for r in results if not r["failed"]]
    print(f"{len(results)} trials ({len(results) - len(ok)} failed); "
          f"best W1 {ok[0]['best_score']!r}" if ok else "all trials failed")
    return 0 if ok else 2


def cmd_search_top(args):
    from .hypersearch import top_results
    try:
        results = top_results(args.out, args.k)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read search output {args.out}: {exc}") from exc
    for r in results:
        print(f"trial {r['trial']:4d}  best_w1={r['best_score']!r}  "
              f"rung={r['rung_reached']}  failed={r['failed']}")
        print(f"  config: {json.dumps(r['config'], sort_keys=True)}")
    return 0


def cmd_run(args):
    from .harness import ExperimentPlan, run
    try:
        plan = ExperimentPlan.load(args.plan)
    except (OSError, ValueError, TypeError, KeyError,
            json.JSONDecodeError) as exc:
        raise ValidationError(f"bad plan {args.plan}: {exc}") from exc
    summary, table = run(plan)
    print(table, end="")
    if all(cell["median"] is None for cell in summary.values()) and summary:
        return 2
    return 0


def cmd_export(args):
    from .harness import export_density_curves
    records = sorted(Path(args.records).rglob("record.json"))
    if not records:
        raise ValidationError(f"no record.json files under {args.records}")
    try:
        written = export_density_curves([str(p) for p in records],
                                        args.out or (Path(args.records) / "curves"),
                                        grid_count=args.grid)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for w in written:
        print(w)
    return 0


def cmd_diagnose(args):
    from .harness import diagnose_critic
    from .records import TrialRecord
    try:
        record = TrialRecord.load(args.record)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot load record {args.record}: {exc}") from exc
    try:
        report = diagnose_critic(record)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    print(json.dumps(report, indent=2))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="densbench")
    sub = p.add_subparsers(dest="verb", required=True)

    d = sub.add_parser("data", help="emit newline-delimited dataset samples")
    d.add_argument("--spec", required=True, help="unimodal | multimodal | spec JSON path")
    d.add_argument("--n", type=int, required=True)
    d.add_argument("--seed", type=int, required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_data)

    m = sub.add_parser("metrics", help="metric utilities")
    msub = m.add_subparsers(dest="metric", required=True)
    w1 = msub.add_parser("w1", help="direct Wasserstein-1 between sample files")
    w1.add_argument("--a", required=True)
    w1.add_argument("--b", required=True)
    w1.set_defaults(func=cmd_metrics_w1)
    kde = msub.add_parser("kde", help="count-calibrated KDE curve")
    kde.add_argument("--in", dest="infile", required=True)
    kde.add_argument("--grid", type=int, default=512)
    kde.add_argument("--band-count", type=int, default=500)
    kde.add_argument("--out", required=True)
    kde.set_defaults(func=cmd_metrics_kde)

    t = sub.add_parser("train", help="train a single model")
    tsub = t.add_subparsers(dest="model", required=True)
    for name, fn in (("wgan", cmd_train_wgan), ("gf", cmd_train_gf)):
        tp = tsub.add_parser(name)
        tp.add_argument("--config", required=True)
        tp.add_argument("--data", required=True)
        tp.add_argument("--seed", type=int, required=True)
        tp.add_argument("--out", required=True)
        tp.add_argument("--grid", type=int, default=512)
        tp.set_defaults(func=fn)

    s = sub.add_parser("search", help="ASHA random search over WGAN configs")
    ssub = s.add_subparsers(dest="search_cmd")
    s.add_argument("--space", help="search space JSON (defaults built in)")
    s.add_argument("--data", help="dataset spec")
    s.add_argument("--trials", type=int, default=200)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="search_out")
    s.add_argument("--min-budget", type=int, default=500)
    s.add_argument("--max-budget", type=int, default=20_000)
    s.add_argument("--eta", type=int, default=3)
    s.add_argument("--resume", action="store_true")
    s.set_defaults(func=cmd_search)
    top = ssub.add_parser("top", help="print the k best trials of a search")
    top.add_argument("--out", required=True)
    top.add_argument("--k", type=int, default=5)
    top.set_defaults(func=cmd_search_top)

    r = sub.add_parser("run", help="run an experiment plan")
    r.add_argument("--plan", required=True)
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("export", help="export density curves for records")
    e.add_argument("--records", required=True)
    e.add_argument("--out")
    e.add_argument("--grid", type=int, default=512)
    e.set_defaults(func=cmd_export)

    g = sub.add_parser("diagnose", help="critic-vs-direct W1 report for a record")
    g.add_argument("--record", required=True)
    g.set_defaults(func=cmd_diagnose)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verb == "search" and getattr(args, "search_cmd", None) != "top":
        if not args.data:
            parser.error("search requires --data")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure; partial outputs remain on disk
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
