"""Command-line front end: synth, cluster, train, evaluate, explain,
retune, simulate, gradcheck.

Every command writes its artifacts plus a manifest.json (resolved
arguments, config hash, inputs/outputs, wall time) into --out. A
previous manifest can be fed back through --config to replay a run;
explicit flags override config-file values.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, charts
from . import autodiff as ad
from . import cluster as cluster_mod
from . import dataio
from . import simulate as sim_mod
from . import train as train_mod
from . import xai
from .tft import CHECKPOINT_VERSION, ModelConfig, TftModel
from .train import TrainConfig

DEFAULTS = {
    "synth": {"n": 2000, "features": 10, "classes": 4, "sigma": 0.18,
              "window": 12, "actuators": 8, "seed": 0},
    "cluster": {"classes": 6, "kernel": "linear", "gamma": None, "seed": 0,
                "k_range": "2:9", "max_points": 2000},
    "train": {"window": 12, "classes": None, "ratio": 0.8, "epochs": 10,
              "batch": 64, "lr": 1e-3, "optimizer": "adam",
              "class_weighting": False, "seed": 0, "d_model": 32, "heads": 4,
              "dropout_rate": 0.1},
    "evaluate": {"window": 12, "classes": None, "ratio": 0.8},
    "explain": {"window": 12, "ratio": 0.8, "method": "vsn",
                "class_id": None, "instance": None, "coalitions": 1024,
                "perturbations": 256, "granularity": "feature",
                "background": 25, "probe": 20, "seed": 0},
    "retune": {"window": 12, "ratio": 0.8, "tau": 0.8, "epochs": 10,
               "batch": 64, "lr": 1e-3, "optimizer": "adam",
               "class_weighting": False, "seed": 0, "coalitions": 512,
               "perturbations": 128, "background": 20, "probe": 10},
    "simulate": {"window": 12, "horizon": None, "sensor_delay": 1,
                 "actuation_delay": 1, "drop": 0.0, "sigma": 0.0,
                 "sim_seed": 0, "cost": None},
    "gradcheck": {"tiny": False, "seed": 0, "eps": 1e-5},
}


class CliError(RuntimeError):
    pass


# -- argument plumbing --------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="greenhouse-xai",
        description="Explainable TFT pipeline for greenhouse actuator control",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_, flags):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON file (or prior manifest) "
                                        "supplying argument values")
        p.add_argument("--out", help="output directory", required=False)
        for args, kw in flags:
            p.add_argument(*args, default=None, **kw)
        return p

    add("synth", "generate a synthetic greenhouse dataset", [
        (("--n",), dict(type=int, help="number of rows")),
        (("--features",), dict(type=int)),
        (("--classes",), dict(type=int)),
        (("--sigma",), dict(type=float, help="observation noise")),
        (("--window",), dict(type=int, help="lag base for the label rule")),
        (("--actuators",), dict(type=int)),
        (("--seed",), dict(type=int)),
    ])
    add("cluster", "group actuators into setting classes", [
        (("--data",), dict(help="CSV path")),
        (("--schema",), dict(help="schema JSON path")),
        (("--classes",), dict(type=int, help="cluster count K")),
        (("--kernel",), dict(choices=["linear", "rbf"])),
        (("--gamma",), dict(type=float)),
        (("--seed",), dict(type=int)),
        (("--k-range",), dict(dest="k_range", help="lo:hi for the report")),
        (("--max-points",), dict(dest="max_points", type=int)),
    ])
    add("train", "train the classifier", [
        (("--data",), dict()),
        (("--schema",), dict()),
        (("--labels",), dict(help="per-row labels CSV")),
        (("--window",), dict(type=int)),
        (("--classes",), dict(type=int)),
        (("--ratio",), dict(type=float)),
        (("--epochs",), dict(type=int)),
        (("--batch",), dict(type=int)),
        (("--lr",), dict(type=float)),
        (("--optimizer",), dict(choices=["adam", "sgd-momentum"])),
        (("--class-weighting",), dict(dest="class_weighting",
                                      action="store_true")),
        (("--seed",), dict(type=int)),
        (("--d-model",), dict(dest="d_model", type=int)),
        (("--heads",), dict(type=int)),
        (("--dropout-rate",), dict(dest="dropout_rate", type=float)),
    ])
    add("evaluate", "evaluate a checkpoint on the test split", [
        (("--model",), dict()),
        (("--scaling",), dict()),
        (("--data",), dict()),
        (("--schema",), dict()),
        (("--labels",), dict()),
        (("--window",), dict(type=int)),
        (("--classes",), dict(type=int)),
        (("--ratio",), dict(type=float, help="evaluate on the tail split")),
    ])
    add("explain", "emit VSN/SHAP/LIME attributions", [
        (("--model",), dict()),
        (("--scaling",), dict()),
        (("--data",), dict()),
        (("--schema",), dict()),
        (("--labels",), dict()),
        (("--window",), dict(type=int)),
        (("--ratio",), dict(type=float)),
        (("--method",), dict(choices=["vsn", "shap", "lime"])),
        (("--class-id",), dict(dest="class_id", type=int)),
        (("--instance",), dict(type=int)),
        (("--coalitions",), dict(type=int)),
        (("--perturbations",), dict(type=int)),
        (("--granularity",), dict(choices=["feature", "feature_timestep"])),
        (("--background",), dict(type=int)),
        (("--probe",), dict(type=int, help="probe instances per class")),
        (("--seed",), dict(type=int)),
    ])
    add("retune", "fuse importances and fine-tune the feature set", [
        (("--model",), dict()),
        (("--scaling",), dict()),
        (("--data",), dict()),
        (("--schema",), dict()),
        (("--labels",), dict()),
        (("--window",), dict(type=int)),
        (("--ratio",), dict(type=float)),
        (("--tau",), dict(type=float)),
        (("--epochs",), dict(type=int)),
        (("--batch",), dict(type=int)),
        (("--lr",), dict(type=float)),
        (("--optimizer",), dict(choices=["adam", "sgd-momentum"])),
        (("--class-weighting",), dict(dest="class_weighting",
                                      action="store_true")),
        (("--seed",), dict(type=int)),
        (("--coalitions",), dict(type=int)),
        (("--perturbations",), dict(type=int)),
        (("--background",), dict(type=int)),
        (("--probe",), dict(type=int)),
    ])
    add("simulate", "closed-loop sensor/gateway/actuator run", [
        (("--model",), dict()),
        (("--scaling",), dict()),
        (("--data",), dict()),
        (("--schema",), dict()),
        (("--labels",), dict()),
        (("--assignment",), dict(help="cluster assignment JSON")),
        (("--window",), dict(type=int)),
        (("--horizon",), dict(type=int)),
        (("--sensor-delay",), dict(dest="sensor_delay", type=int)),
        (("--actuation-delay",), dict(dest="actuation_delay", type=int)),
        (("--drop",), dict(type=float)),
        (("--sigma",), dict(type=float, help="sensor measurement noise")),
        (("--sim-seed",), dict(dest="sim_seed", type=int)),
        (("--cost",), dict(help="comma-separated cost coefficients")),
    ])
    add("gradcheck", "finite-difference check of the model gradients", [
        (("--tiny",), dict(action="store_true")),
        (("--seed",), dict(type=int)),
        (("--eps",), dict(type=float)),
    ])
    return parser


def resolve_args(command: str, ns: argparse.Namespace) -> dict:
    """defaults < --config file < explicit flags."""
    resolved = dict(DEFAULTS[command])
    if ns.config:
        with open(ns.config) as fh:
            blob = json.load(fh)
        file_args = blob.get("args", blob)   # accept a prior manifest
        for k, v in file_args.items():
            if k in resolved or k in ("data", "schema", "labels", "model",
                                      "scaling", "assignment"):
                resolved[k] = v
    for k, v in vars(ns).items():
        if k in ("command", "config", "out"):
            continue
        if v is not None:
            resolved[k] = v
    return resolved


def config_hash(args: dict) -> str:
    return hashlib.sha256(
        json.dumps(args, sort_keys=True).encode()).hexdigest()


def write_manifest(out_dir: Path, command: str, args: dict,
                   inputs: list, outputs: list, started: float):
    manifest = {
        "command": command,
        "args": args,
        "config_hash": config_hash(args),
        "seed": args.get("seed", args.get("sim_seed")),
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "wall_time_s": round(time.time() - started, 3),
        "versions": {"package": __version__,
                     "checkpoint_format": CHECKPOINT_VERSION},
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def _need(args: dict, keys: list[str], command: str):
    missing = [k for k in keys if not args.get(k)]
    if missing:
        raise CliError(
            f"{command} requires --{', --'.join(m.replace('_', '-') for m in missing)}"
        )


def _out_dir(ns) -> Path:
    if not ns.out:
        raise CliError("--out directory is required")
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- shared data preparation -----------------------------------------------------


def _load_tables(args):
    schema = dataio.load_schema(args["schema"])
    sensors, actuators = dataio.load_csv(args["data"], schema)
    sensors = dataio.preprocess(sensors)
    actuators = dataio.preprocess(actuators)
    return schema, sensors, actuators


def _windows(args):
    """CSV + labels -> windowed dataset (unscaled)."""
    schema, sensors, actuators = _load_tables(args)
    labels = dataio.load_labels_csv(args["labels"])
    ds = dataio.generate_rolling_window(sensors, labels, args["window"])
    return schema, sensors, actuators, ds


def _scaled_split(args, ds):
    """Temporal split then leakage-free scaling (training path)."""
    train_ds, test_ds = dataio.split_data(ds, args["ratio"])
    (train_s, test_s), params = dataio.scale_data(train_ds, test_ds)
    return train_s, test_s, params


def _scaled_with_saved_params(args, ds):
    """Apply a persisted scaler (evaluate/explain/simulate path)."""
    params = dataio.ScalingParams.from_json(args["scaling"])
    scaled = params.transform(ds)
    if args.get("ratio"):
        train_s, test_s = dataio.split_data(scaled, args["ratio"])
    else:
        train_s, test_s = scaled, scaled
    return params, scaled, train_s, test_s


# -- commands -----------------------------------------------------------------------


def cmd_synth(ns) -> int:
    started = time.time()
    args = resolve_args("synth", ns)
    out = _out_dir(ns)
    cfg = dataio.SynthConfig(
        n_steps=args["n"], n_features=args["features"],
        n_classes=args["classes"], seed=args["seed"],
        noise_sigma=args["sigma"], window=args["window"],
        n_actuators=args["actuators"])
    data = dataio.synth_dataset(cfg)
    csv_path = out / "synth.csv"
    dataio.write_csv(csv_path, data.sensors, data.actuators)
    schema_path = out / "schema.json"
    dataio.save_schema(schema_path, "timestamp",
                       data.sensors.feature_names,
                       data.actuators.feature_names)
    labels_path = out / "labels.csv"
    dataio.write_labels_csv(labels_path, data.labels)
    truth_path = out / "truth.json"
    with open(truth_path, "w") as fh:
        json.dump({
            "causal_features": data.causal_features,
            "causal_indices": data.causal_indices.tolist(),
            "class_counts": data.class_counts.tolist(),
            "rule_accuracy_on_noisy": data.rule_accuracy,
            "thresholds": data.thresholds.tolist(),
            "lag": data.lag,
        }, fh, indent=2)
        fh.write("\n")
    print(f"wrote {csv_path} ({args['n']} rows, {args['features']} sensors, "
          f"{args['actuators']} actuators); rule accuracy on noisy obs: "
          f"{data.rule_accuracy:.3f}")
    write_manifest(out, "synth", args, [],
                   [csv_path, schema_path, labels_path, truth_path], started)
    return 0


def cmd_cluster(ns) -> int:
    started = time.time()
    args = resolve_args("cluster", ns)
    _need(args, ["data", "schema"], "cluster")
    out = _out_dir(ns)
    _, _, actuators = _load_tables(args)
    names, profiles = cluster_mod.actuator_profiles(
        actuators, max_points=args["max_points"])
    assignment = cluster_mod.kernel_kmeans(
        profiles, K=args["classes"], kernel=args["kernel"],
        gamma=args["gamma"], seed=args["seed"], names=names)
    assign_path = out / "assignment.json"
    assignment.to_json(assign_path)

    std = cluster_mod.standardize_columns(actuators.values)
    labels = cluster_mod.label_frames(std, names, assignment)
    labels_path = out / "labels.csv"
    dataio.write_labels_csv(labels_path, labels)

    lo, hi = (int(x) for x in args["k_range"].split(":"))
    rows = cluster_mod.k_selection_report(
        profiles, range(lo, hi + 1), kernel=args["kernel"],
        gamma=args["gamma"], seed=args["seed"])
    report_path = out / "k_selection.csv"
    cluster_mod.write_k_selection_csv(report_path, rows)
    print(f"K={args['classes']} objective {assignment.objective:.4f}; "
          f"labels written for {len(labels)} rows")
    write_manifest(out, "cluster", args, [args["data"], args["schema"]],
                   [assign_path, labels_path, report_path], started)
    return 0


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        epochs=args["epochs"], batch_size=args["batch"],
        learning_rate=args["lr"], optimizer=args["optimizer"],
        seed=args["seed"], class_weighting=bool(args["class_weighting"]))


def cmd_train(ns) -> int:
    started = time.time()
    args = resolve_args("train", ns)
    _need(args, ["data", "schema", "labels"], "train")
    out = _out_dir(ns)
    _, _, _, ds = _windows(args)
    train_s, test_s, scaling = _scaled_split(args, ds)
    n_classes = args["classes"] or int(ds.labels.max()) + 1
    model = TftModel(ModelConfig(
        n_features=len(train_s.feature_names), window=args["window"],
        n_classes=n_classes, d_model=args["d_model"], n_heads=args["heads"],
        dropout=args["dropout_rate"]), seed=args["seed"])
    tc = _train_config(args)
    history = train_mod.train(model, train_s, tc, val_set=test_s)
    yhat, importance = train_mod.predict(model, test_s)
    report = train_mod.evaluate(yhat, test_s.labels, n_classes,
                                history=history)

    ckpt = out / "checkpoint.json"
    model.save(ckpt)
    scaling_path = out / "scaling.json"
    scaling.to_json(scaling_path)
    hist_path = out / "history.json"
    history.to_json(hist_path)
    eval_path = out / "eval.json"
    report.to_json(eval_path)
    conf_path = out / "confusion.csv"
    report.confusion_to_csv(conf_path)
    acc_svg, loss_svg = train_mod.curves_svg(history)
    charts.save_svg(out / "accuracy.svg", acc_svg)
    charts.save_svg(out / "loss.svg", loss_svg)
    print(f"train acc {history.train_accuracy[-1]:.3f}  "
          f"test acc {report.accuracy:.3f}  macro-F1 {report.macro_f1:.3f}")
    write_manifest(out, "train", args,
                   [args["data"], args["schema"], args["labels"]],
                   [ckpt, scaling_path, hist_path, eval_path, conf_path,
                    out / "accuracy.svg", out / "loss.svg"], started)
    return 0


def cmd_evaluate(ns) -> int:
    started = time.time()
    args = resolve_args("evaluate", ns)
    _need(args, ["model", "scaling", "data", "schema", "labels"], "evaluate")
    out = _out_dir(ns)
    _, _, _, ds = _windows(args)
    model = TftModel.load(args["model"])
    _, _, _, test_s = _scaled_with_saved_params(args, ds)
    yhat, _ = train_mod.predict(model, test_s)
    report = train_mod.evaluate(yhat, test_s.labels,
                                args["classes"] or model.config.n_classes)
    eval_path = out / "eval.json"
    report.to_json(eval_path)
    conf_path = out / "confusion.csv"
    report.confusion_to_csv(conf_path)
    print(f"accuracy {report.accuracy:.3f}  macro-F1 {report.macro_f1:.3f} "
          f"on {report.n_samples} windows")
    write_manifest(out, "evaluate", args,
                   [args["model"], args["data"]], [eval_path, conf_path],
                   started)
    return 0


def _background_sample(train_s, size, seed):
    rng = np.random.default_rng(seed)
    idx = rng.choice(train_s.n_samples, size=min(size, train_s.n_samples),
                     replace=False)
    return train_s.samples[np.sort(idx)]


def cmd_explain(ns) -> int:
    started = time.time()
    args = resolve_args("explain", ns)
    _need(args, ["model", "scaling", "data", "schema", "labels"], "explain")
    out = _out_dir(ns)
    _, _, _, ds = _windows(args)
    model = TftModel.load(args["model"])
    scaling, _, train_s, test_s = _scaled_with_saved_params(args, ds)
    names = list(test_s.feature_names)
    method = args["method"]

    if method == "vsn":
        attr = xai.vsn_global_importance(model, test_s)
    elif args["instance"] is not None:
        sample = test_s.samples[args["instance"]]
        target = args["class_id"]
        if target is None:
            target = int(np.argmax(model.predict_proba(sample[None])[0]))
        if method == "shap":
            background = _background_sample(train_s, args["background"],
                                            args["seed"])
            attr = xai.kernel_shap(
                model.predict_proba, background, sample, target,
                n_coalitions=args["coalitions"], seed=args["seed"],
                granularity=args["granularity"], feature_names=names)
        else:
            mu = train_s.samples.mean(axis=(0, 1))
            sd = train_s.samples.std(axis=(0, 1))
            attr = xai.lime_explain(
                model.predict_proba, mu, sd, sample, target,
                n_perturbations=args["perturbations"], seed=args["seed"],
                granularity=args["granularity"], feature_names=names)
        attr.scope = f"instance:{args['instance']}"
    else:
        if args["class_id"] is not None:
            keep = np.flatnonzero(test_s.labels == args["class_id"])
            if keep.size == 0:
                raise CliError(
                    f"no test instances with class {args['class_id']}")
            probe = keep[np.sort(np.random.default_rng(args["seed"]).choice(
                keep.size, size=min(args["probe"], keep.size),
                replace=False))]
            scope = f"class:{args['class_id']}"
        else:
            probe = xai.stratified_probe(test_s.labels, args["probe"],
                                         args["seed"])
            scope = "global"
        if method == "shap":
            background = _background_sample(train_s, args["background"],
                                            args["seed"])
            attr = xai.shap_global_importance(
                model, test_s, background, probe,
                n_coalitions=args["coalitions"], seed=args["seed"])
        else:
            mu = train_s.samples.mean(axis=(0, 1))
            sd = train_s.samples.std(axis=(0, 1))
            attr = xai.lime_global_importance(
                model, test_s, mu, sd, probe,
                n_perturbations=args["perturbations"], seed=args["seed"])
        attr.scope = scope

    attr_path = out / "attribution.json"
    attr.to_json(attr_path)
    top = attr.top_blocks(10)
    svg = charts.bar_chart_svg([t[0] for t in top], [t[1] for t in top],
                               f"Top features ({method}, {attr.scope})")
    svg_path = out / "top10.svg"
    charts.save_svg(svg_path, svg)
    print(f"{method} {attr.scope}: top " +
          ", ".join(f"{n}={v:+.4f}" for n, v in top[:3]))
    write_manifest(out, "explain", args, [args["model"], args["data"]],
                   [attr_path, svg_path], started)
    return 0


def cmd_retune(ns) -> int:
    started = time.time()
    args = resolve_args("retune", ns)
    _need(args, ["model", "scaling", "data", "schema", "labels"], "retune")
    out = _out_dir(ns)
    _, _, _, ds = _windows(args)
    model = TftModel.load(args["model"])
    scaling, _, train_s, test_s = _scaled_with_saved_params(args, ds)
    names = list(test_s.feature_names)

    probe = xai.stratified_probe(test_s.labels, args["probe"], args["seed"])
    vsn_attr = xai.vsn_global_importance(model, test_s)
    background = _background_sample(train_s, args["background"], args["seed"])
    shap_attr = xai.shap_global_importance(
        model, test_s, background, probe, n_coalitions=args["coalitions"],
        seed=args["seed"])
    mu = train_s.samples.mean(axis=(0, 1))
    sd = train_s.samples.std(axis=(0, 1))
    lime_attr = xai.lime_global_importance(
        model, test_s, mu, sd, probe,
        n_perturbations=args["perturbations"], seed=args["seed"])

    fused = xai.retune_feature_importance(vsn_attr, shap_attr, lime_attr)
    fused_path = out / "fused.json"
    fused.to_json(fused_path)
    for attr, fname in ((vsn_attr, "vsn.json"), (shap_attr, "shap.json"),
                        (lime_attr, "lime.json")):
        attr.to_json(out / fname)

    new_model, comparison = xai.fine_tune_feature_selection(
        model, fused, train_s, test_s, args["tau"], _train_config(args))
    ckpt_path = out / "finetuned.json"
    new_model.save(ckpt_path)
    comp_path = out / "comparison.json"
    with open(comp_path, "w") as fh:
        json.dump(comparison, fh, indent=2)
        fh.write("\n")
    print(f"retained {comparison['n_features_after']}/"
          f"{comparison['n_features_before']} features; test accuracy "
          f"{comparison['pre_test_accuracy']:.3f} -> "
          f"{comparison['post_test_accuracy']:.3f}")
    write_manifest(out, "retune", args, [args["model"], args["data"]],
                   [fused_path, ckpt_path, comp_path, out / "vsn.json",
                    out / "shap.json", out / "lime.json"], started)
    return 0


def cmd_simulate(ns) -> int:
    started = time.time()
    args = resolve_args("simulate", ns)
    _need(args, ["model", "scaling", "data", "schema", "labels"], "simulate")
    out = _out_dir(ns)
    schema, sensors, actuators = _load_tables(args)
    labels = dataio.load_labels_csv(args["labels"])
    model = TftModel.load(args["model"])
    scaling = dataio.ScalingParams.from_json(args["scaling"])

    k = model.config.n_classes
    std_act = cluster_mod.standardize_columns(actuators.values)
    command_map = cluster_mod.class_command_map(std_act, labels, k)
    n_act = command_map.shape[1]
    cost = (np.array([float(c) for c in args["cost"].split(",")])
            if args["cost"] else np.ones(n_act))
    horizon = args["horizon"] or min(sensors.n_rows, 500)
    cfg = sim_mod.SimConfig(
        horizon=horizon, command_map=command_map, cost=cost,
        window=args["window"], sensor_delay=args["sensor_delay"],
        actuation_delay=args["actuation_delay"], drop_prob=args["drop"],
        sensor_noise=args["sigma"], seed=args["sim_seed"])

    tft_controller = sim_mod.make_tft_controller(model, scaling,
                                                 sensors.feature_names)
    trace = sim_mod.run(cfg, tft_controller, sensors.values)
    trace_path = out / "trace.csv"
    trace.to_csv(trace_path)
    summary_path = out / "summary.json"
    with open(summary_path, "w") as fh:
        json.dump(trace.summary(), fh, indent=2)
        fh.write("\n")

    controllers = {
        "tft": tft_controller,
        "replay": sim_mod.replay_controller(labels, cfg.window,
                                            cfg.sensor_delay),
        "idle": lambda window: 0,
    }
    rows = sim_mod.compare_policies(cfg, controllers, sensors.values,
                                    recorded_labels=labels)
    pol_csv, pol_json = out / "policies.csv", out / "policies.json"
    sim_mod.write_policy_report(pol_csv, pol_json, rows)
    print(f"horizon {horizon}: total energy {trace.total_energy:.3f}, "
          f"{len(trace.events)} commands "
          f"({trace.summary()['commands_dropped']} dropped)")
    write_manifest(out, "simulate", args,
                   [args["model"], args["data"], args["labels"]],
                   [trace_path, summary_path, pol_csv, pol_json], started)
    return 0


def cmd_gradcheck(ns) -> int:
    started = time.time()
    args = resolve_args("gradcheck", ns)
    cfg = ModelConfig(n_features=3, window=4, n_classes=3, d_model=8,
                      n_heads=2, dropout=0.0)
    if not args["tiny"]:
        cfg = ModelConfig(n_features=4, window=6, n_classes=3, d_model=8,
                          n_heads=2, dropout=0.0)
    model = TftModel(cfg, seed=args["seed"])
    rng = np.random.default_rng(args["seed"] + 1)
    x = rng.normal(size=(2, cfg.window, cfg.n_features))
    y = rng.integers(0, cfg.n_classes, size=2)

    def loss_fn(_params):
        out = model.forward(x, train_flag=False, record_graph=True)
        return train_mod.cross_entropy(out.probs, y)

    err = ad.grad_check(loss_fn, model.param_list(), eps=args["eps"])
    ok = bool(err < 1e-4)
    print(f"max relative error {err:.3e} (threshold 1e-4): "
          f"{'PASS' if ok else 'FAIL'}")
    if ns.out:
        out = _out_dir(ns)
        blob_path = out / "gradcheck.json"
        with open(blob_path, "w") as fh:
            json.dump({"max_relative_error": err, "threshold": 1e-4,
                       "passed": ok, "n_params": model.n_params(),
                       "config": vars(cfg)}, fh, indent=2)
            fh.write("\n")
        write_manifest(out, "gradcheck", args, [], [blob_path], started)
    return 0 if ok else 1


COMMANDS = {
    "synth": cmd_synth,
    "cluster": cmd_cluster,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "explain": cmd_explain,
    "retune": cmd_retune,
    "simulate": cmd_simulate,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        return COMMANDS[ns.command](ns)
    except (CliError, ValueError, RuntimeError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
