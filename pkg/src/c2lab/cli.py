"""Command-line pipeline: gen, extract, train, attack, craft, harden,
matrix, loop, report.

Every subcommand writes its artifacts into --out-dir together with a
manifest.json capturing parameters, input hashes, and output hashes, so any
artifact can be reproduced byte-for-byte from its manifest.  Exit codes:
0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import attack as attack_mod
from . import craft as craft_mod
from . import datagen, schema
from .detector import (
    DESK_WIDTHS,
    FULL_WIDTHS,
    Model,
    ModelConfig,
    TrainConfig,
    load_model,
    save_model,
)
from .evaluation import (
    Dataset,
    EvalMetrics,
    LoopConfig,
    cross_matrix,
    evaluate,
    harden,
    misclassified_malicious_pct,
    prepare_dataset,
    read_matrix_csv,
    run_loop,
    train_model,
    write_matrix_csv,
)
from .features import (
    BENIGN,
    MALICIOUS,
    RawFeatureVector,
    compute_features,
    normalize,
    read_feature_csv,
    write_feature_csv,
)
from .pcap import (
    DEFAULT_IDLE_TIMEOUT,
    ParseStats,
    apply_labels,
    assemble_flows,
    filter_complete,
    flow_is_tls,
    load_labels,
    parse_pcap,
)
from . import report as report_mod


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir: Path, command: str, params: dict,
                    inputs: list[Path], outputs: list[Path],
                    stats: dict | None = None) -> None:
    doc = {
        "command": command,
        "parameters": params,
        "inputs": {str(p): _sha256(Path(p)) for p in inputs},
        "outputs": {str(Path(p).relative_to(out_dir)): _sha256(Path(p)) for p in outputs},
    }
    if stats:
        doc["stats"] = stats
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _metrics_outputs(out_dir: Path, rows: list[tuple[str, EvalMetrics]],
                     stem: str = "metrics") -> list[Path]:
    csv_path = out_dir / f"{stem}.csv"
    txt_path = out_dir / f"{stem}.txt"
    report_mod.write_metrics_csv(csv_path, rows)
    txt_path.write_text(report_mod.format_metrics_table(rows))
    return [csv_path, txt_path]


# ---------------------------------------------------------------------------
# gen

def cmd_gen_pcap(args) -> int:
    out = _out_dir(args)
    cfg = datagen.PcapCorpusConfig(n_benign=args.benign, n_malicious=args.malicious,
                                   seed=args.seed)
    scripts = datagen.random_flow_scripts(cfg)
    pcap_path = out / "corpus.pcap"
    pcap_path.write_bytes(datagen.gen_pcap(scripts))
    labels_path = out / "labels.csv"
    labels_path.write_text(datagen.labels_csv_text(scripts))
    print(f"wrote {pcap_path} ({len(scripts)} flows) and {labels_path}")
    _write_manifest(out, "gen pcap",
                    {"benign": args.benign, "malicious": args.malicious, "seed": args.seed},
                    [], [pcap_path, labels_path])
    return 0


def cmd_gen_features(args) -> int:
    out = _out_dir(args)
    cfg = datagen.SynthDatasetConfig(n_benign=args.benign, n_malicious=args.malicious,
                                     seed=args.seed, separation=args.separation)
    rows = datagen.gen_feature_dataset(cfg)
    path = out / "features.csv"
    write_feature_csv(path, rows)
    print(f"wrote {path} ({len(rows)} rows)")
    _write_manifest(out, "gen features",
                    {"benign": args.benign, "malicious": args.malicious,
                     "seed": args.seed, "separation": args.separation},
                    [], [path])
    return 0


# ---------------------------------------------------------------------------
# extract

def extract_features_from_files(pcap_paths: list[Path], labels_path: Path | None,
                                idle_timeout: float, tls_only: bool):
    """Shared extract routine: returns (rows, stats-per-file, failures, matched)."""
    rows: list[RawFeatureVector] = []
    per_file_stats: dict[str, dict] = {}
    failures: dict[str, str] = {}
    labels = load_labels(labels_path) if labels_path else {}
    matched = 0
    for path in pcap_paths:
        stats = ParseStats()
        try:
            packets = parse_pcap(path.read_bytes(), stats=stats)
        except ValueError as exc:
            failures[str(path)] = str(exc)
            continue
        flows = assemble_flows(packets, idle_timeout=idle_timeout)
        matched += apply_labels(flows, labels)
        complete = filter_complete(flows)
        if tls_only:
            complete = [f for f in complete if flow_is_tls(f)]
        for flow in complete:
            fv = compute_features(flow)
            fv.flow_id = flow.uid(path.stem)
            fv.label = flow.label
            rows.append(fv)
        per_file_stats[str(path)] = stats.as_dict() | {"complete_flows": len(complete)}
    return rows, per_file_stats, failures, matched


def cmd_extract(args) -> int:
    out = _out_dir(args)
    pcap_dir = Path(args.pcap_dir)
    pcap_paths = sorted(pcap_dir.glob("*.pcap"))
    if not pcap_paths:
        raise SystemExit(f"error: no .pcap files in {pcap_dir}")
    labels_path = Path(args.labels) if args.labels else None
    rows, stats, failures, matched = extract_features_from_files(
        pcap_paths, labels_path, args.idle_timeout, args.tls_only)
    for path, msg in failures.items():
        print(f"warning: {path}: {msg}", file=sys.stderr)
    if not rows:
        raise SystemExit("error: zero complete flows across all inputs")
    if labels_path and matched == 0:
        print("warning: label file matched no flows; all rows are unlabeled",
              file=sys.stderr)
    features_path = out / "features.csv"
    write_feature_csv(features_path, rows)
    print(f"wrote {features_path} ({len(rows)} flows)")
    inputs = list(pcap_paths) + ([labels_path] if labels_path else [])
    _write_manifest(out, "extract",
                    {"pcap_dir": str(pcap_dir), "labels": args.labels,
                     "idle_timeout": args.idle_timeout, "tls_only": args.tls_only},
                    inputs, [features_path],
                    stats={"files": stats, "parse_failures": failures,
                           "label_matched_flows": matched})
    return 0


# ---------------------------------------------------------------------------
# train

def _model_cfg_from_args(args, profile_seed: int) -> ModelConfig:
    widths = FULL_WIDTHS if args.profile == "full" else DESK_WIDTHS
    return ModelConfig(layer_widths=widths, dropout_rate=args.dropout, seed=profile_seed)


def _train_cfg_from_args(args, seed: int) -> TrainConfig:
    return TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                       learning_rate=args.learning_rate, shuffle_seed=seed)


def _dataset_for_model(model: Model, features_path: Path) -> Dataset:
    meta = model.train_meta
    expected_sha = meta.get("features_sha256")
    if expected_sha and _sha256(features_path) != expected_sha:
        raise SystemExit(
            "error: features file does not match the one the model was trained on; "
            "split reconstruction would leak test flows")
    raw = read_feature_csv(features_path)
    return prepare_dataset(raw, test_frac=meta["test_frac"], seed=meta["data_seed"],
                           balance=meta["balance"])


def cmd_train(args) -> int:
    out = _out_dir(args)
    features_path = Path(args.features)
    raw = read_feature_csv(features_path)
    ds = prepare_dataset(raw, test_frac=args.test_frac, seed=args.seed,
                         balance=not args.no_balance)
    model_cfg = _model_cfg_from_args(args, args.seed)
    train_cfg = _train_cfg_from_args(args, args.seed)
    model = train_model(ds.train, model_cfg, train_cfg, ds.norm_params)
    model.train_meta.update({
        "data_seed": args.seed,
        "test_frac": args.test_frac,
        "balance": not args.no_balance,
        "features_sha256": _sha256(features_path),
        "profile": args.profile,
    })
    model_path = out / "model.json"
    save_model(model, model_path)

    metrics = evaluate(model, ds.test_by_label(BENIGN), ds.test_by_label(MALICIOUS))
    outputs = [model_path] + _metrics_outputs(out, [("Original", metrics)], "metrics_clean")
    print(f"trained {args.profile} model ({model.param_count()} parameters); "
          f"clean test accuracy {100 * metrics.accuracy:.1f}%")
    _write_manifest(out, "train",
                    {"features": str(features_path), "profile": args.profile,
                     "epochs": args.epochs, "batch_size": args.batch_size,
                     "learning_rate": args.learning_rate, "dropout": args.dropout,
                     "seed": args.seed, "test_frac": args.test_frac,
                     "balance": not args.no_balance},
                    [features_path], outputs)
    return 0


# ---------------------------------------------------------------------------
# attack

def _split_samples(ds: Dataset, raw_rows: list[RawFeatureVector], split: str):
    ids = ds.train_ids if split == "train" else ds.test_ids
    normalized = ds.train if split == "train" else ds.test
    raw_map = {r.flow_id: r for r in raw_rows}
    ben = [s for s in normalized if s.label == BENIGN]
    mal = [s for s in normalized if s.label == MALICIOUS]
    mal_raw = [raw_map[s.flow_id] for s in mal]
    return ben, mal, mal_raw, ids


def _specs_from_args(args) -> list:
    if args.roster == "matrix":
        return attack_mod.full_attack_roster(args.epsilon)
    if args.roster == "metrics":
        return attack_mod.metrics_roster(args.epsilon)
    if args.factor is not None:
        return [attack_mod.DurationMultiplier(args.factor)]
    mode = "plus_only" if args.mode == "plus" else "plus_minus"
    return [attack_mod.AttackSpec(args.set, side=args.side, mode=mode,
                                  epsilon=args.epsilon, steps=args.steps)]


def cmd_attack(args) -> int:
    out = _out_dir(args)
    model = load_model(args.model)
    features_path = Path(args.features)
    ds = _dataset_for_model(model, features_path)
    raw_rows = read_feature_csv(features_path)
    ben, mal, mal_raw, _ = _split_samples(ds, raw_rows, args.split)

    specs = _specs_from_args(args)
    metrics_rows = [("Original", evaluate(model, ben, mal))]
    outputs: list[Path] = []
    for spec in specs:
        if isinstance(spec, attack_mod.DurationMultiplier):
            samples = attack_mod.generate_attack_set(model, mal_raw, spec, ds.norm_params)
        else:
            samples = attack_mod.generate_attack_set(model, mal, spec)
        adv_path = out / f"adv_{spec.slug()}.csv"
        attack_mod.write_adversarial_csv(adv_path, samples)
        outputs.append(adv_path)
        metrics_rows.append(
            (spec.label(), evaluate(model, ben, [s.perturbed for s in samples])))
    outputs += _metrics_outputs(out, metrics_rows)
    print(report_mod.format_metrics_table(metrics_rows), end="")
    _write_manifest(out, "attack",
                    {"model": args.model, "features": str(features_path),
                     "split": args.split, "set": args.set, "mode": args.mode,
                     "side": args.side, "epsilon": args.epsilon, "steps": args.steps,
                     "factor": args.factor, "roster": args.roster},
                    [Path(args.model), features_path], outputs)
    return 0


# ---------------------------------------------------------------------------
# craft

def cmd_craft(args) -> int:
    out = _out_dir(args)
    model = load_model(args.model)
    if model.norm_params is None:
        raise SystemExit("error: model file carries no normalization parameters")
    features_path = Path(args.features)
    ds = _dataset_for_model(model, features_path)
    samples = attack_mod.read_adversarial_csv(args.adv)
    by_stem: dict[str, list] = {}
    for s in samples:
        stem, _, rest = s.flow_id.partition(":")
        if not rest:
            raise SystemExit(f"error: adversarial flow id {s.flow_id!r} has no pcap stem")
        by_stem.setdefault(stem, []).append((rest, s))

    crafted_dir = out / "crafted"
    crafted_dir.mkdir(exist_ok=True)
    pcap_dir = Path(args.pcap_dir)
    reports = []
    crafted_rows: list[RawFeatureVector] = []
    outputs: list[Path] = []
    inputs: list[Path] = [Path(args.model), Path(args.adv), features_path]
    for stem in sorted(by_stem):
        src = pcap_dir / f"{stem}.pcap"
        if not src.exists():
            raise SystemExit(f"error: {src} not found for flows in the adversarial set")
        inputs.append(src)
        original = src.read_bytes()
        flows = {f.uid(): f for f in filter_complete(
            assemble_flows(parse_pcap(original), idle_timeout=args.idle_timeout))}
        plans = []
        data = original
        for rest, sample in by_stem[stem]:
            flow = flows.get(rest)
            if flow is None:
                raise SystemExit(f"error: flow {stem}:{rest} not found in {src}")
            plan = craft_mod.plan_craft(flow, sample, model.norm_params)
            data = craft_mod.apply_craft(data, plan)
            plans.append(plan)
        dst = crafted_dir / f"{stem}.pcap"
        dst.write_bytes(data)
        outputs.append(dst)
        for plan in plans:
            reports.append(craft_mod.verify_craft(original, data, plan).as_dict())
        for fv in craft_mod.recompute_crafted_features(data, plans):
            fv.flow_id = f"{stem}:{fv.flow_id}"
            fv.label = MALICIOUS
            crafted_rows.append(fv)

    report_path = out / "craft_reports.json"
    report_path.write_text(json.dumps(reports, indent=2, sort_keys=True) + "\n")
    crafted_csv = out / "crafted_features.csv"
    write_feature_csv(crafted_csv, crafted_rows)
    outputs += [report_path, crafted_csv]

    raw_rows = read_feature_csv(features_path)
    ben, _, _, _ = _split_samples(ds, raw_rows, args.split)
    crafted_norm = [normalize(r, ds.norm_params, provenance="crafted") for r in crafted_rows]
    metrics_rows = [("Crafted Duration +", evaluate(model, ben, crafted_norm))]
    outputs += _metrics_outputs(out, metrics_rows)
    print(report_mod.format_metrics_table(metrics_rows), end="")
    _write_manifest(out, "craft",
                    {"model": args.model, "adv": args.adv, "pcap_dir": args.pcap_dir,
                     "features": str(features_path), "split": args.split,
                     "idle_timeout": args.idle_timeout},
                    inputs, outputs)
    return 0


# ---------------------------------------------------------------------------
# harden

def cmd_harden(args) -> int:
    out = _out_dir(args)
    model = load_model(args.model)
    features_path = Path(args.features)
    ds = _dataset_for_model(model, features_path)
    adv = attack_mod.read_adversarial_csv(args.adv)
    meta = model.train_meta
    train_cfg = TrainConfig(
        epochs=args.epochs or meta.get("epochs", 30),
        batch_size=args.batch_size or meta.get("batch_size", 64),
        learning_rate=args.learning_rate or meta.get("learning_rate", 1e-3),
        shuffle_seed=meta.get("shuffle_seed", meta.get("data_seed", 0)),
    )
    hardened = harden(ds.train, adv, model.config, train_cfg,
                      ds.norm_params, ds.train_ids)
    hardened.train_meta.update({k: meta[k] for k in
                                ("data_seed", "test_frac", "balance", "features_sha256")
                                if k in meta})
    hardened.train_meta["hardened_with"] = args.adv
    model_path = out / "model_hardened.json"
    save_model(hardened, model_path)

    metrics = evaluate(hardened, ds.test_by_label(BENIGN), ds.test_by_label(MALICIOUS))
    adv_pct = misclassified_malicious_pct(hardened, [s.perturbed for s in adv])
    print(f"hardened model: clean test accuracy {100 * metrics.accuracy:.1f}%, "
          f"{adv_pct:.1f}% of its hardening set still evades")
    outputs = [model_path] + _metrics_outputs(out, [("Hardened (clean)", metrics)],
                                              "metrics_clean")
    _write_manifest(out, "harden",
                    {"model": args.model, "features": str(features_path),
                     "adv": args.adv, "epochs": train_cfg.epochs,
                     "batch_size": train_cfg.batch_size,
                     "learning_rate": train_cfg.learning_rate},
                    [Path(args.model), features_path, Path(args.adv)],
                    outputs)
    return 0


# ---------------------------------------------------------------------------
# matrix

def _generate_for_spec(model, spec, mal_norm, mal_raw, params):
    if isinstance(spec, attack_mod.DurationMultiplier):
        return attack_mod.generate_attack_set(model, mal_raw, spec, params)
    return attack_mod.generate_attack_set(model, mal_norm, spec)


def cmd_matrix(args) -> int:
    out = _out_dir(args)
    model = load_model(args.model)
    features_path = Path(args.features)
    ds = _dataset_for_model(model, features_path)
    raw_rows = read_feature_csv(features_path)
    _, train_mal, train_mal_raw, _ = _split_samples(ds, raw_rows, "train")
    test_ben, test_mal, test_mal_raw, _ = _split_samples(ds, raw_rows, "test")

    meta = model.train_meta
    train_cfg = TrainConfig(
        epochs=args.epochs or meta.get("epochs", 30),
        batch_size=meta.get("batch_size", 64),
        learning_rate=meta.get("learning_rate", 1e-3),
        shuffle_seed=meta.get("shuffle_seed", meta.get("data_seed", 0)),
    )
    roster = attack_mod.full_attack_roster(args.epsilon)

    hardened_models: list[tuple[str, Model]] = []
    eval_sets: list[tuple[str, list]] = []
    clean_rows: list[tuple[str, EvalMetrics]] = []
    for spec in roster:
        adv_train = _generate_for_spec(model, spec, train_mal, train_mal_raw, ds.norm_params)
        hm = harden(ds.train, adv_train, model.config, train_cfg,
                    ds.norm_params, ds.train_ids)
        hardened_models.append((spec.label(), hm))
        adv_eval = _generate_for_spec(model, spec, test_mal, test_mal_raw, ds.norm_params)
        eval_sets.append((spec.label(), [s.perturbed for s in adv_eval]))
        clean_rows.append((spec.label(), evaluate(hm, test_ben, test_mal)))

    matrix = cross_matrix(hardened_models, eval_sets)
    matrix_path = out / "matrix.csv"
    write_matrix_csv(matrix_path, matrix)
    original_row = cross_matrix([("Original", model)], eval_sets)
    original_path = out / "original_row.csv"
    write_matrix_csv(original_path, original_row)
    outputs = [matrix_path, original_path]
    outputs += _metrics_outputs(out, clean_rows, "hardened_clean")
    print(report_mod.format_matrix(matrix, title="Hardened model (row) vs attack set (column)"))
    _write_manifest(out, "matrix",
                    {"model": args.model, "features": str(features_path),
                     "epsilon": args.epsilon, "epochs": train_cfg.epochs},
                    [Path(args.model), features_path], outputs)
    return 0


# ---------------------------------------------------------------------------
# loop

def cmd_loop(args) -> int:
    out = _out_dir(args)
    features_path = Path(args.features)
    raw = read_feature_csv(features_path)
    options = ["A", "B", "C"] if args.option == "all" else [args.option]
    model_cfg = _model_cfg_from_args(args, args.seed)
    train_cfg = _train_cfg_from_args(args, args.seed)
    outputs: list[Path] = []
    sizes: dict[str, list[int]] = {}
    for option in options:
        cfg = LoopConfig(option=option, iterations=args.iterations,
                         attack=attack_mod.AttackSpec("all", mode="plus_minus",
                                                      epsilon=args.epsilon),
                         model_cfg=model_cfg, train_cfg=train_cfg,
                         seed=args.seed, test_frac=args.test_frac)
        result = run_loop(cfg, raw)
        path = out / f"loop_{option}.csv"
        write_matrix_csv(path, result.matrix)
        outputs.append(path)
        sizes[option] = result.train_sizes
        print(report_mod.format_matrix(result.matrix, title=f"Option {option}"))
    sizes_path = out / "train_sizes.json"
    sizes_path.write_text(json.dumps(sizes, indent=2, sort_keys=True) + "\n")
    outputs.append(sizes_path)
    _write_manifest(out, "loop",
                    {"features": str(features_path), "option": args.option,
                     "iterations": args.iterations, "seed": args.seed,
                     "epsilon": args.epsilon, "profile": args.profile,
                     "epochs": args.epochs, "batch_size": args.batch_size,
                     "learning_rate": args.learning_rate,
                     "test_frac": args.test_frac},
                    [features_path], outputs)
    return 0


# ---------------------------------------------------------------------------
# report

def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        raise SystemExit(f"error: {run_dir} is not a directory")
    out = Path(args.out_dir) if args.out_dir else run_dir / "report"
    out.mkdir(parents=True, exist_ok=True)

    sections: list[str] = []
    outputs: list[Path] = []
    inputs: list[Path] = []

    for metrics_file in sorted(run_dir.glob("metrics*.csv")) + sorted(run_dir.glob("hardened_clean.csv")):
        rows = report_mod.read_metrics_csv(metrics_file)
        sections.append(f"== {metrics_file.name}\n" + report_mod.format_metrics_table(rows))
        fig = out / f"{metrics_file.stem}_bars.png"
        report_mod.save_metrics_bars(rows, fig)
        outputs.append(fig)
        inputs.append(metrics_file)

    for matrix_file in sorted(run_dir.glob("matrix.csv")) + sorted(run_dir.glob("original_row.csv")) \
            + sorted(run_dir.glob("loop_*.csv")):
        matrix = read_matrix_csv(matrix_file)
        sections.append(f"== {matrix_file.name}\n" + report_mod.format_matrix(matrix))
        fig = out / f"{matrix_file.stem}_heatmap.png"
        report_mod.save_matrix_heatmap(matrix, fig)
        outputs.append(fig)
        inputs.append(matrix_file)

    curves: dict[str, np.ndarray] = {}
    for adv_file in sorted(run_dir.glob("adv_x*.csv")):
        samples = attack_mod.read_adversarial_csv(adv_file)
        slot = schema.SLOT_OF[31]
        if "Original" not in curves and samples:
            curves["Original"] = np.array([s.original.values[slot] for s in samples])
        curves[samples[0].spec.label()] = np.array(
            [s.perturbed.values[slot] for s in samples])
        inputs.append(adv_file)
    if curves:
        fig = out / "duration_cdf.png"
        report_mod.save_duration_cdf(curves, fig)
        outputs.append(fig)

    for model_file in sorted(run_dir.glob("model*.json")):
        model = load_model(model_file)
        losses = model.train_meta.get("epoch_losses")
        if losses:
            fig = out / f"{model_file.stem}_loss.png"
            report_mod.save_loss_curve(losses, fig)
            outputs.append(fig)
            inputs.append(model_file)

    if not sections and not outputs:
        raise SystemExit(f"error: no reportable artifacts found in {run_dir}")
    text_path = out / "report.txt"
    text_path.write_text("\n".join(sections) if sections else "no tabular artifacts\n")
    outputs.append(text_path)
    print(f"report written to {out}")
    _write_manifest(out, "report", {"run_dir": str(run_dir)}, inputs, outputs)
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    """Returns the parser plus a name -> subparser map for config defaults."""
    parser = argparse.ArgumentParser(
        prog="c2lab",
        description="Encrypted-C2 flow detection and evasion lab",
        epilog="--config FILE loads JSON defaults per subcommand; explicit flags win.",
    )
    parser.add_argument("--config", default=None,
                        help='JSON file of defaults, e.g. {"train": {"epochs": 50}}')
    sub = parser.add_subparsers(dest="command", required=True)
    named: dict[str, argparse.ArgumentParser] = {}

    p = sub.add_parser("gen", help="generate synthetic data")
    gen_sub = p.add_subparsers(dest="kind", required=True)
    g = gen_sub.add_parser("pcap", help="scripted TCP flow capture plus label file")
    g.add_argument("--benign", type=int, default=60)
    g.add_argument("--malicious", type=int, default=60)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out-dir", default=".")
    g.set_defaults(func=cmd_gen_pcap)
    g = gen_sub.add_parser("features", help="feature-space dataset")
    g.add_argument("--benign", type=int, default=600)
    g.add_argument("--malicious", type=int, default=600)
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--separation", type=float, default=1.0,
                   help="class separation knob; 0 overlaps the classes")
    g.add_argument("--out-dir", default=".")
    g.set_defaults(func=cmd_gen_features)

    p = sub.add_parser("extract", help="pcap directory -> feature CSV")
    p.add_argument("--pcap-dir", required=True)
    p.add_argument("--labels", help="CSV: client_ip,client_port,server_ip,server_port,label")
    p.add_argument("--idle-timeout", type=float, default=DEFAULT_IDLE_TIMEOUT)
    p.add_argument("--tls-only", action="store_true",
                   help="keep only flows whose first client payload looks like TLS")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train the detector on a feature CSV")
    p.add_argument("--features", required=True)
    p.add_argument("--profile", choices=("desk", "full"), default="desk")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-frac", type=float, default=0.2)
    p.add_argument("--no-balance", action="store_true")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="generate adversarial sets and evasion metrics")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--split", choices=("test", "train"), default="test",
                   help="train-split sets feed hardening; test-split sets feed evaluation")
    p.add_argument("--set", choices=("set1", "set2", "set3", "all"), default="all")
    p.add_argument("--mode", choices=("plus", "plusminus"), default="plusminus")
    p.add_argument("--side", choices=("both", "client", "server"), default="both")
    p.add_argument("--epsilon", type=float, default=0.3)
    p.add_argument("--steps", type=int, default=1,
                   help=">1 runs iterated FGSM in epsilon/steps increments")
    p.add_argument("--factor", type=float, default=None,
                   help="duration multiplier attack instead of FGSM")
    p.add_argument("--roster", choices=("metrics", "matrix"), default=None,
                   help="generate a whole attack roster instead of one spec")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("craft", help="realize duration targets in pcap bytes")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--adv", required=True, help="increase-only duration adversarial CSV")
    p.add_argument("--pcap-dir", required=True)
    p.add_argument("--split", choices=("test", "train"), default="test")
    p.add_argument("--idle-timeout", type=float, default=DEFAULT_IDLE_TIMEOUT)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_craft)

    p = sub.add_parser("harden", help="retrain with adversarial training samples")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--adv", required=True, help="adversarial CSV from the training split")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_harden)

    p = sub.add_parser("matrix", help="hardening roster and cross-attack matrix")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--epsilon", type=float, default=0.3)
    p.add_argument("--epochs", type=int, default=None,
                   help="override training epochs for the hardened models")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("loop", help="iterative attack-hardening loop")
    p.add_argument("--features", required=True)
    p.add_argument("--option", choices=("A", "B", "C", "all"), default="C")
    p.add_argument("--iterations", type=int, default=3)
    p.add_argument("--epsilon", type=float, default=0.3)
    p.add_argument("--profile", choices=("desk", "full"), default="desk")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-frac", type=float, default=0.2)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_loop)

    p = sub.add_parser("report", help="render tables and figures from stored artifacts")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_report)

    named.update(sub.choices)
    named.update({f"gen {kind}": sp for kind, sp in gen_sub.choices.items()})
    del named["gen"]  # config sections target the concrete generators
    return parser, named


def _apply_config_defaults(parser, named, path) -> None:
    """Config sections become subcommand defaults; explicit flags still win."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SystemExit(f"error: cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        parser.error("config file must be a JSON object keyed by subcommand")
    for command, values in doc.items():
        target = named.get(command)
        if target is None:
            parser.error(f"config names unknown subcommand {command!r}")
        if not isinstance(values, dict):
            parser.error(f"config section {command!r} must be an object")
        actions = {a.dest: a for a in target._actions}
        for key in values:
            if key not in actions:
                parser.error(f"config key {command}.{key} matches no flag")
            actions[key].required = False  # a config value satisfies it
        target.set_defaults(**values)


def main(argv: list[str] | None = None) -> int:
    parser, named = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, rest = pre.parse_known_args(sys.argv[1:] if argv is None else argv)
    try:
        if known.config:
            _apply_config_defaults(parser, named, known.config)
        args = parser.parse_args(rest)
        return args.func(args)
    except SystemExit as exc:
        if isinstance(exc.code, str):
            print(exc.code, file=sys.stderr)
            return 1
        raise
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
