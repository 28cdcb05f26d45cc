"""Command line entry points: run, synth, summarize, serve.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict
from pathlib import Path

from segal.data import (
    DatasetError,
    SyntheticConfig,
    generate_synthetic,
    load_dataset,
    save_dataset,
)
from segal.orchestrator import (
    ConfigError,
    StepRow,
    config_from_dict,
    emit_results,
    run_experiment,
    summarize_runs,
    train_full_reference,
)


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _resolve_dataset(spec: dict):
    if "manifest" in spec:
        records, classes = load_dataset(spec["manifest"])
        if classes != 2:
            raise ConfigError("only binary datasets are supported")
        return records
    if "synthetic" in spec:
        try:
            return generate_synthetic(SyntheticConfig(**spec["synthetic"]))
        except TypeError as exc:
            raise ConfigError(f"invalid synthetic config: {exc}") from exc
    raise ConfigError("dataset needs either a 'manifest' path or a 'synthetic' block")


def _experiment_config(raw: dict, seed: int):
    exp = dict(raw.get("experiment", {}))
    exp["seed"] = seed
    return config_from_dict(exp)


def cmd_run(args) -> int:
    raw = _load_json(args.config)
    records = _resolve_dataset(raw.get("dataset", {}))
    seeds = raw.get("seeds", [0])
    out_root = Path(raw.get("output_dir", "runs"))
    for seed in seeds:
        cfg = _experiment_config(raw, int(seed))
        result = run_experiment(cfg, records)
        out_dir = out_root / f"seed_{seed}"
        emit_results(result, out_dir)
        if raw.get("full_data_reference", False):
            reference = train_full_reference(cfg, records)
            (out_dir / "reference.json").write_text(
                json.dumps({"dice_obj": reference.dice_obj, "f1": reference.f1,
                            "jaccard": reference.jaccard}, indent=2) + "\n"
            )
        last = result.rows[-1]
        print(f"seed {seed}: {len(result.rows)} steps, final dice_obj "
              f"{last.dice_obj:.4f}, labeled pixels {last.labeled_pixels}")
    return 0


def cmd_synth(args) -> int:
    raw = _load_json(args.config)
    try:
        cfg = SyntheticConfig(**raw.get("synthetic", {}))
    except TypeError as exc:
        raise ConfigError(f"invalid synthetic config: {exc}") from exc
    out_dir = raw.get("output_dir")
    if not out_dir:
        raise ConfigError("synth config needs an output_dir")
    records = generate_synthetic(cfg)
    manifest = save_dataset(records, classes=2, out_dir=out_dir)
    print(f"wrote {len(records)} records, manifest at {manifest}")
    return 0


def _rows_from_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_summarize(args) -> int:
    root = Path(args.dir)
    run_dirs = sorted(p.parent for p in root.glob("**/results.csv"))
    if not run_dirs:
        raise ConfigError(f"no results.csv found under {root}")
    by_strategy: dict[str, list] = {}
    references = []
    for run_dir in run_dirs:
        rows = _rows_from_csv(run_dir / "results.csv")
        if not rows:
            continue
        key = f"{rows[0]['strategy']}/{rows[0]['acq_fn']}"
        parsed = [
            StepRow(
                step=int(r["step"]), strategy=r["strategy"], acq_fn=r["acq_fn"],
                seed=int(r["seed"]), labeled_pixels=int(r["labeled_pixels"]),
                f1=float(r["f1"]), dice_obj=float(r["dice_obj"]),
                jaccard=float(r["jaccard"]), calibration=None, wallclock_s=0.0,
            )
            for r in rows
        ]
        by_strategy.setdefault(key, []).extend(parsed)
        ref_path = run_dir / "reference.json"
        if ref_path.exists():
            references.append(json.loads(ref_path.read_text())["dice_obj"])
    if not references:
        raise ConfigError("no reference.json found; rerun with full_data_reference: true")
    reference = float(sum(references) / len(references))
    summary = summarize_runs(by_strategy, reference)
    out_path = root / "summary.json"
    out_path.write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary, indent=2))
    print(f"summary written to {out_path}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from segal.service import AnnotationServer, create_app

    raw = _load_json(args.config)
    records = _resolve_dataset(raw.get("dataset", {}))
    seed = raw.get("seeds", [0])[0]
    cfg = _experiment_config(raw, int(seed))
    state_dir = raw.get("state_dir") or str(Path(raw.get("output_dir", "runs")) / "service")
    server = AnnotationServer(cfg, records, state_dir)
    if server.params is None:
        server.start_initial_training()
    app = create_app(server)
    print(f"serving on port {args.port}, state in {state_dir}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segal",
        description="Active-learning segmentation experiments and annotation service",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an active-learning experiment")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", required=True, help="synthetic dataset config JSON")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("summarize", help="pixels-to-target summary over run dirs")
    p.add_argument("--dir", required=True, help="directory holding run outputs")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("serve", help="start the human-annotation HTTP service")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DatasetError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
