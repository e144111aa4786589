"""Command-line front end wiring the whole stack.

Subcommands: gen-data, train, eval, plan, simulate, report. Every command
accepts ``--config FILE`` (a flat JSON object of the keys below) with
command-line flags taking precedence. Exit codes: 0 success, 1 validation
error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import lstm as lstm_mod
from . import planner
from . import simulation as sim
from .baselines import ConstantVelocityModel, init_feedforward, train_feedforward
from .modelio import (load_predictor, save_feedforward_model,
                      save_intention_model, save_lstm_model)
from .mpc import MpcConfig
from .safety import GippsParams

CONFIG_KEYS = {
    "seed": int,
    "out": str,
    "episodes": int,
    "noise_std": float,
    "data": str,
    "manifest": str,
    "kind": str,
    "epochs": int,
    "batch_size": int,
    "learning_rate": float,
    "hidden_size": int,
    "history_len": int,
    "horizon": int,
    "stride": int,
    "scenario": str,
    "predictor": str,
    "model": str,
    "tau": float,
    "b_rear": float,
    "b_front": float,
    "body_length": float,
}


class ValidationError(ValueError):
    pass


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError as exc:
        raise ValidationError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ValidationError(f"config {path} must be a JSON object")
    for key, value in cfg.items():
        if key not in CONFIG_KEYS:
            raise ValidationError(f"config {path}: unknown key {key!r}")
        try:
            cfg[key] = CONFIG_KEYS[key](value)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"config {path}: bad value for {key}: {exc}") from exc
    return cfg


def resolve(args, cfg: dict, key: str, default=None):
    """Flag value if given, else config value, else default."""
    val = getattr(args, key.replace("-", "_"), None)
    if val is not None:
        return val
    if key in cfg:
        return cfg[key]
    return default


def _require(value, what: str):
    if value is None:
        raise ValidationError(f"missing required option: {what}")
    return value


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args, cfg) -> int:
    seed = int(resolve(args, cfg, "seed", 42))
    episodes = int(_require(resolve(args, cfg, "episodes"), "--episodes"))
    noise = float(resolve(args, cfg, "noise_std", 0.05))
    out = Path(_require(resolve(args, cfg, "out"), "--out"))
    if episodes < 1:
        raise ValidationError("--episodes must be >= 1")
    if noise < 0:
        raise ValidationError("--noise-std must be >= 0")
    out.mkdir(parents=True, exist_ok=True)
    dataset, eps = data_mod.synth_lane_change_dataset(seed, episodes, noise)
    train_ids, val_ids = data_mod.split_episodes(eps, 0.2, seed)
    data_mod.save_trajectories(dataset, out / "trajectories.csv")
    manifest = {
        "format_version": 1,
        "seed": seed,
        "n_episodes": episodes,
        "noise_std": noise,
        "dt": dataset.dt,
        "lane_width": dataset.lane_width,
        "lane_count": dataset.lane_count,
        "label_counts": {lbl: sum(1 for e in eps if e.label == lbl)
                         for lbl in data_mod.LABELS},
        "episodes": [{"label": e.label, "primary": e.primary_id,
                      "vehicles": e.vehicle_ids} for e in eps],
        "split": {"train": train_ids, "val": val_ids},
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"wrote {out / 'trajectories.csv'} ({len(dataset.tracks)} vehicles) "
          f"and {out / 'manifest.json'}")
    return 0


def _load_dataset(args, cfg):
    data_path = Path(_require(resolve(args, cfg, "data"), "--data"))
    manifest_path = resolve(args, cfg, "manifest")
    if manifest_path is None:
        manifest_path = data_path.parent / "manifest.json"
        if data_path.is_dir():
            manifest_path = data_path / "manifest.json"
    if data_path.is_dir():
        data_path = data_path / "trajectories.csv"
    if not data_path.exists():
        raise ValidationError(f"dataset not found: {data_path}")
    if not Path(manifest_path).exists():
        raise ValidationError(f"manifest not found: {manifest_path}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    dataset = data_mod.load_trajectories(
        data_path, lane_width=manifest.get("lane_width", 3.5),
        lane_count=manifest.get("lane_count", 3))
    return dataset, manifest


def _windows_for(dataset, manifest, history_len, horizon, stride):
    train_ids = manifest["split"]["train"]
    val_ids = manifest["split"]["val"]
    train = data_mod.make_windows(dataset, history_len, horizon, stride,
                                  vehicle_ids=train_ids)
    val = data_mod.make_windows(dataset, history_len, horizon, stride,
                                vehicle_ids=val_ids)
    return train, val


def _gradient_self_test(model, sample, seed: int, n_entries: int = 40) -> dict:
    """Spot-check analytic gradients against central differences at save time."""
    window, target = sample
    batch = [(window, target)]
    loss0, grads = lstm_mod.loss_and_gradients(model.params, batch)
    gvec = grads.to_vector()
    pvec = model.params.to_vector()
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(pvec), size=min(n_entries, len(pvec)), replace=False)
    eps = 1e-5
    max_err = 0.0
    for i in idx:
        bumped = pvec.copy()
        bumped[i] += eps
        lp, _ = lstm_mod.loss_and_gradients(model.params.from_vector(bumped), batch)
        bumped[i] -= 2 * eps
        lm, _ = lstm_mod.loss_and_gradients(model.params.from_vector(bumped), batch)
        fd = (lp - lm) / (2 * eps)
        err = abs(fd - gvec[i]) / max(abs(fd), abs(gvec[i]), 1e-4)
        max_err = max(max_err, err)
    return {"max_rel_err": max_err, "passed": bool(max_err <= 1e-4),
            "entries_checked": int(len(idx)), "loss": loss0}


DEFAULT_EPOCHS = {"lstm": 30, "feedforward": 3, "intention": 8}


def cmd_train(args, cfg) -> int:
    seed = int(resolve(args, cfg, "seed", 42))
    kind = resolve(args, cfg, "kind", "lstm")
    if kind not in ("lstm", "feedforward", "intention"):
        raise ValidationError(f"unknown model kind {kind!r}; "
                              "choose lstm, feedforward or intention")
    out = Path(_require(resolve(args, cfg, "out"), "--out"))
    hidden = int(resolve(args, cfg, "hidden_size", 32))
    history_len = int(resolve(args, cfg, "history_len", data_mod.DEFAULT_HISTORY))
    horizon = int(resolve(args, cfg, "horizon", data_mod.DEFAULT_HORIZON))
    stride = int(resolve(args, cfg, "stride", data_mod.DEFAULT_STRIDE))
    epochs = int(resolve(args, cfg, "epochs", DEFAULT_EPOCHS[kind]))
    batch_size = int(resolve(args, cfg, "batch_size", 64))
    lr = float(resolve(args, cfg, "learning_rate", 2e-3))

    dataset, manifest = _load_dataset(args, cfg)
    train_windows, _ = _windows_for(dataset, manifest, history_len, horizon,
                                    stride)
    if not train_windows:
        raise ValidationError("training split produced no windows")
    out.mkdir(parents=True, exist_ok=True)
    hyper = lstm_mod.TrainConfig(epochs=epochs, batch_size=batch_size,
                                 learning_rate=lr, dt=dataset.dt,
                                 history_len=history_len)
    feature_dim = train_windows[0].window.history.shape[1]

    if kind == "lstm":
        params = lstm_mod.init_params(hidden, feature_dim, 2, seed)
        samples = [(w.seq_features, w.seq_targets) for w in train_windows]
        model, history = lstm_mod.train(params, samples, hyper, seed)
        check = _gradient_self_test(
            model, (lstm_mod.FeatureWindow(
                history=model.in_scaler.transform(train_windows[0].seq_features),
                dt=dataset.dt, anchor=train_windows[0].window.anchor),
                model.out_scaler.transform(train_windows[0].seq_targets)),
            seed)
        if not check["passed"]:
            raise RuntimeError(f"gradient self-test failed: {check}")
        save_lstm_model(out / "model_lstm.bin", model,
                        metadata={"seed": seed, "epochs": epochs,
                                  "grad_check": check})
        model_path = out / "model_lstm.bin"
    elif kind == "feedforward":
        ff = init_feedforward(history_len, feature_dim, horizon, 64, seed)
        samples = [(w.window.history, w.target) for w in train_windows]
        predictor, history = train_feedforward(ff, samples, hyper, seed)
        save_feedforward_model(out / "model_feedforward.bin", predictor,
                               metadata={"seed": seed, "epochs": epochs})
        model_path = out / "model_feedforward.bin"
    else:
        params = lstm_mod.init_params(hidden, feature_dim, 3, seed)
        label_ids = {lbl: i for i, lbl in enumerate(data_mod.LABELS)}
        samples = [(w.window.history, label_ids[w.label])
                   for w in train_windows]
        model, history = lstm_mod.train_intention(params, samples, hyper, seed)
        save_intention_model(out / "model_intention.bin", model,
                             metadata={"seed": seed, "epochs": epochs})
        model_path = out / "model_intention.bin"

    with open(out / f"loss_history_{kind}.csv", "w") as fh:
        fh.write("epoch,loss\n")
        for i, loss in enumerate(history):
            fh.write(f"{i},{loss!r}\n")
    print(f"wrote {model_path} (final loss {history[-1]:.6g})")
    return 0


def cmd_eval(args, cfg) -> int:
    model_path = _require(resolve(args, cfg, "model"), "--model")
    if not Path(model_path).exists():
        raise ValidationError(f"model not found: {model_path}")
    predictor = load_predictor(model_path)
    dataset, manifest = _load_dataset(args, cfg)
    history_len = int(resolve(args, cfg, "history_len",
                              getattr(predictor, "history_len",
                                      data_mod.DEFAULT_HISTORY)))
    horizon = int(resolve(args, cfg, "horizon", data_mod.DEFAULT_HORIZON))
    stride = int(resolve(args, cfg, "stride", data_mod.DEFAULT_STRIDE))
    _, val_windows = _windows_for(dataset, manifest, history_len, horizon,
                                  stride)
    if not val_windows:
        raise ValidationError("validation split produced no windows")
    truth = np.stack([data_mod.target_positions(w) for w in val_windows])
    pred = np.stack([predictor.predict(w.window, horizon)[:, :2]
                     for w in val_windows])
    cv = np.stack([ConstantVelocityModel().predict(w.window, horizon)[:, :2]
                   for w in val_windows])
    m_model = data_mod.metrics(pred, truth)
    m_cv = data_mod.metrics(cv, truth)
    print(f"validation windows: {len(val_windows)}")
    print(f"{'horizon':>8} {'model rmse':>12} {'const-v rmse':>12} "
          f"{'model lat':>12} {'const-v lat':>12}")
    for sec in (1.0, 2.0, 3.0, 5.0):
        k = int(round(sec / dataset.dt)) - 1
        if k >= horizon:
            continue
        print(f"{sec:>7.1f}s {m_model['rmse_by_horizon'][k]:>12.3f} "
              f"{m_cv['rmse_by_horizon'][k]:>12.3f} "
              f"{m_model['lateral_rmse_by_horizon'][k]:>12.3f} "
              f"{m_cv['lateral_rmse_by_horizon'][k]:>12.3f}")
    print(f"model  ade={m_model['ade']:.3f} fde={m_model['fde']:.3f}")
    print(f"const  ade={m_cv['ade']:.3f} fde={m_cv['fde']:.3f}")
    out = resolve(args, cfg, "out")
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "eval_metrics.csv", "w") as fh:
            fh.write("step,model_rmse,const_rmse,model_lat_rmse,const_lat_rmse\n")
            for k in range(horizon):
                fh.write(f"{k + 1},{m_model['rmse_by_horizon'][k]!r},"
                         f"{m_cv['rmse_by_horizon'][k]!r},"
                         f"{m_model['lateral_rmse_by_horizon'][k]!r},"
                         f"{m_cv['lateral_rmse_by_horizon'][k]!r}\n")
        print(f"wrote {out / 'eval_metrics.csv'}")
    return 0


def cmd_plan(args, cfg) -> int:
    step = planner.LaneChangeStep(theta_i=args.theta, x_end=args.x_end,
                                  y_end=args.y_end)
    curve = planner.fit_cubic(step)
    ok, peak = planner.check_comfort(curve, step, args.speed)
    print(f"coefficients: a0={curve.a0!r} a1={curve.a1!r} "
          f"a2={curve.a2!r} a3={curve.a3!r}")
    print(f"boundary: y(0)={planner.eval_curve(curve, 0.0):.2e} "
          f"y({step.x_end})={planner.eval_curve(curve, step.x_end):.6f} "
          f"end heading={planner.eval_heading(curve, step.x_end):.2e} rad")
    print(f"comfort at {args.speed} m/s: peak lateral accel {peak:.3f} m/s^2 "
          f"-> {'pass' if ok else 'FAIL'}")
    traj = planner.sample_trajectory(curve, step, args.speed, args.dt)
    print(f"sampled {len(traj)} states at dt={args.dt}s")
    return 0


def _make_predictor(name: str, model_path, history_fallback: int):
    if name == "const":
        return ConstantVelocityModel()
    if name in ("lstm", "feedforward"):
        if model_path is None:
            raise ValidationError(f"predictor {name!r} needs --model")
        if not Path(model_path).exists():
            raise ValidationError(f"model not found: {model_path}")
        return load_predictor(model_path)
    raise ValidationError(f"unknown predictor {name!r}; "
                          "choose lstm, const or feedforward")


def cmd_simulate(args, cfg) -> int:
    scenario_name = _require(resolve(args, cfg, "scenario"), "--scenario")
    if scenario_name not in sim.SCENARIOS:
        raise ValidationError(
            f"unknown scenario {scenario_name!r}; valid: "
            + ", ".join(sorted(sim.SCENARIOS)))
    predictor_name = resolve(args, cfg, "predictor", "const")
    seed = int(resolve(args, cfg, "seed", 0))
    out = Path(_require(resolve(args, cfg, "out"), "--out"))
    spec = sim.SCENARIOS[scenario_name]()
    predictor = _make_predictor(predictor_name, resolve(args, cfg, "model"),
                                data_mod.DEFAULT_HISTORY)
    gipps = GippsParams(
        tau=float(resolve(args, cfg, "tau", 1.0)),
        b_rear=float(resolve(args, cfg, "b_rear", 4.0)),
        b_front=float(resolve(args, cfg, "b_front", 4.0)),
        body_length=float(resolve(args, cfg, "body_length",
                                  sim.default_gipps(spec).body_length)))
    log = sim.run_scenario(spec, predictor, gipps, MpcConfig(), seed=seed,
                           predictor_name=predictor_name)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{scenario_name}_{predictor_name}"
    sim.write_simlog_csv(log, out / f"{stem}_log.csv")
    sim.write_summary(log, out / f"{stem}_summary.json")
    s = sim.summarize(log)
    print(f"scenario={scenario_name} predictor={predictor_name} "
          f"collision={s['collision']} peak_rai={s['peak_rai']:.3f} "
          f"min_gap={s['min_gap'] if s['min_gap'] is None else round(s['min_gap'], 2)} "
          f"final_lane={s['final_lane']}")
    print(f"wrote {out / (stem + '_log.csv')} and {out / (stem + '_summary.json')}")
    return 0


def cmd_report(args, cfg) -> int:
    if len(args.summaries) < 2:
        raise ValidationError("report needs at least two summary files")
    rows = []
    for path in args.summaries:
        if not Path(path).exists():
            raise ValidationError(f"summary not found: {path}")
        rows.append(sim.load_summary(path))
    rows.sort(key=lambda r: (r["peak_rai"], r["predictor"]))
    header = ("predictor", "scenario", "peak_rai", "mean_rai", "min_gap",
              "peak_abs_decel", "completion_time", "collision")
    widths = [12, 16, 9, 9, 8, 15, 16, 9]

    def fmt(val):
        if val is None:
            return "-"
        if isinstance(val, float):
            return f"{val:.3f}"
        return str(val)

    line = " ".join(h.ljust(w) for h, w in zip(header, widths))
    print(line)
    print("-" * len(line))
    for r in rows:
        print(" ".join(fmt(r.get(h)).ljust(w) for h, w in zip(header, widths)))
    out = resolve(args, cfg, "out")
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "report.csv", "w") as fh:
            fh.write(",".join(header) + "\n")
            for r in rows:
                fh.write(",".join("" if r.get(h) is None else
                                  (repr(r[h]) if isinstance(r[h], float)
                                   else str(r[h])) for h in header) + "\n")
        print(f"wrote {out / 'report.csv'}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lanesafe",
        description="lane-change prediction, planning and simulation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file; flags override it")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")

    p = sub.add_parser("gen-data", help="generate a synthetic trajectory dataset")
    common(p)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--noise-std", dest="noise_std", type=float, default=None)

    p = sub.add_parser("train", help="train a predictor on a dataset")
    common(p)
    p.add_argument("--data", default=None, help="dataset dir or CSV")
    p.add_argument("--manifest", default=None)
    p.add_argument("--kind", default=None,
                   choices=("lstm", "feedforward", "intention"))
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--learning-rate", dest="learning_rate", type=float,
                   default=None)
    p.add_argument("--hidden-size", dest="hidden_size", type=int, default=None)
    p.add_argument("--history-len", dest="history_len", type=int, default=None)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)

    p = sub.add_parser("eval", help="score a trained model on the held-out split")
    common(p)
    p.add_argument("--model", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--manifest", default=None)
    p.add_argument("--history-len", dest="history_len", type=int, default=None)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)

    p = sub.add_parser("plan", help="inspect one cubic lane-change fit")
    common(p)
    p.add_argument("--theta", type=float, default=0.0,
                   help="start heading [rad]")
    p.add_argument("--x-end", dest="x_end", type=float, default=50.0)
    p.add_argument("--y-end", dest="y_end", type=float, default=3.5)
    p.add_argument("--speed", type=float, default=20.0)
    p.add_argument("--dt", type=float, default=0.1)

    p = sub.add_parser("simulate", help="run one scenario closed loop")
    common(p)
    p.add_argument("--scenario", default=None)
    p.add_argument("--predictor", default=None,
                   choices=("lstm", "const", "feedforward"))
    p.add_argument("--model", default=None)

    p = sub.add_parser("report", help="tabulate two or more run summaries")
    common(p)
    p.add_argument("summaries", nargs="*")
    return parser


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "plan": cmd_plan,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else {}
        return COMMANDS[args.command](args, cfg)
    except (ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
