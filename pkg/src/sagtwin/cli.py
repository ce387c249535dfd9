"""Command-line entry point: ``sagtwin {ingest,train,run,scenario,report}``.

Exit codes: 0 success, 1 other package error, 2 no valid segments,
3 malformed input row, 4 identification or training failure, 5 missing or
unreadable artifact.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import detection as det
from . import expert as ex
from . import narx, pipeline, regulatory, scenarios, twin
from .errors import (ArtifactError, IdentificationFailed, InsufficientData, InsufficientSegments, MalformedRow,
                     RetrainDeferred, SagTwinError, SegmentTooShort, TrainingDiverged)

logger = logging.getLogger("sagtwin")

EXIT_OK, EXIT_ERROR, EXIT_NO_SEGMENTS, EXIT_MALFORMED, EXIT_TRAINING, EXIT_ARTIFACT = range(6)

REGULATORY_FILE = "regulatory.json"
NARX_FILE = "narx.json"
FINGERPRINT_FILE = "fingerprint.json"
TRAIN_REPORT_FILE = "train_report.json"


def _write_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def save_fingerprints(baselines, path):
    _write_json({"format_version": 1, "kind": "residual_fingerprint",
                 "cvs": [b.to_dict() for b in baselines]}, path)


def load_fingerprints(path):
    try:
        with open(path) as fh:
            d = json.load(fh)
        if d.get("kind") != "residual_fingerprint" or d.get("format_version") != 1:
            raise ArtifactError(f"{path} is not a supported fingerprint artifact")
        return tuple(det.ResidualFingerprint.from_dict(c) for c in d["cvs"])
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ArtifactError(f"cannot load fingerprints from {path}: {exc}") from exc


def _baselines(model, segments):
    res = np.vstack([narx.proportional_residuals(model, s)[0] for s in segments])
    return tuple(det.fingerprint(res[:, j]) for j in range(res.shape[1]))


def _split(segments):
    """Training and held-out segments of a conditioned dataset."""
    if len(segments) >= 2:
        return pipeline.select_train_test(segments)
    seg = segments[0]
    cut = int(0.75 * len(seg))
    return seg[:cut], seg[cut:]


def _rulebase(cfg):
    return ex.load_rulebase(cfg.paths.rulebase)


def _load_components(cfg, model_dir):
    d = Path(model_dir)
    for name in (REGULATORY_FILE, NARX_FILE, FINGERPRINT_FILE):
        if not (d / name).is_file():
            raise ArtifactError(f"missing model artifact {d / name}")
    comps = twin.TwinComponents(_rulebase(cfg), regulatory.load_model(d / REGULATORY_FILE),
                                narx.load_model(d / NARX_FILE))
    return comps, load_fingerprints(d / FINGERPRINT_FILE)


def _load_dataset(path):
    if not Path(path).is_file():
        raise ArtifactError(f"dataset {path} not found")
    return pipeline.load_segments(path)


# -- commands -----------------------------------------------------------------

def cmd_ingest(args, cfg):
    raw = pipeline.read_csv(args.raw)
    data = pipeline.condition(raw, cfg.validity)
    if not data.segments:
        raise InsufficientSegments("no valid segments")
    out = Path(args.out or cfg.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pipeline.write_csv(data.series, out / "conditioned.csv")
    pipeline.write_manifest(data.manifest, out / "manifest.csv")
    print(f"{len(data.segments)} segments, {len(data.series)} records -> {out / 'conditioned.csv'}")
    return EXIT_OK


def cmd_train(args, cfg):
    segments = _load_dataset(args.dataset)
    train_seg, _ = _split(segments)
    tc = cfg.training
    orders = regulatory.search_order(train_seg, tc.candidate_orders, tc.order_threshold,
                                     restarts=tc.restarts, seed=cfg.seed)
    reg = orders.models[orders.order]
    ncfg = narx.TrainConfig(restarts=tc.restarts, seed=cfg.seed)
    search = narx.search_structure(train_seg, tc.candidate_lags, tc.candidate_widths,
                                   tc.structure_threshold, config=ncfg)
    model = narx.train(train_seg, search.m, search.n, search.hidden_width, ncfg)
    baselines = _baselines(model, [train_seg])

    out = Path(args.models or cfg.paths.model_dir)
    out.mkdir(parents=True, exist_ok=True)
    regulatory.save_model(reg, out / REGULATORY_FILE)
    narx.save_model(model, out / NARX_FILE)
    save_fingerprints(baselines, out / FINGERPRINT_FILE)
    report = {
        "seed": cfg.seed,
        "regulatory": {"order": orders.order, "costs": {str(k): v for k, v in orders.costs.items()}},
        "narx": {"m": search.m, "n": search.n, "hidden_width": search.hidden_width, "cost": model.cost,
                 "validation_costs": {f"m={m},n={n},width={w}": c for ((m, n), w), c in search.costs.items()}},
        "residual_std": [float(np.sqrt(b.variance)) for b in baselines],
        "training_records": len(train_seg),
    }
    _write_json(report, out / TRAIN_REPORT_FILE)
    print(f"regulatory order {orders.order}, cost {reg.cost:.6g}")
    print(f"narx m={search.m} n={search.n} width={search.hidden_width}, cost {model.cost:.6g}")
    return EXIT_OK


def _series_for_run(path, cfg):
    segments = _load_dataset(path)
    series = pipeline.SampledSeries.concatenate(segments) if len(segments) > 1 else segments[0]
    if cfg.paths.scenario:
        series = scenarios.apply(scenarios.load_scenario(cfg.paths.scenario), series)
    return series


def _bounds(cfg):
    s = cfg.supervisor
    return twin.Bounds((s.y1_grid, s.y2_grid), s.y_box, s.u_box)


def run_loop(components, baselines, series, cfg, out_dir):
    """Moving-horizon loop over a recorded series.

    Per sample ``k``: feed the one-step residual to the detector, retrain
    if triggered, re-estimate the regulatory state from the records before
    ``k``, roll the twin out and optionally score the supervisor limits.
    Everything is written to CSV/JSONL files in ``out_dir``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    horizon, dcfg = cfg.horizon, cfg.detection
    detector = det.DriftDetector(baselines, dcfg)
    model = components.narx
    residuals, t_index = narx.proportional_residuals(model, series)
    res_at = dict(zip(t_index.tolist(), residuals))
    start = max(components.lag_window, cfg.estimation.N_E, model.burn_in)
    bounds = _bounds(cfg) if cfg.supervisor.enabled else None
    trace, decisions, events = [], [], []
    next_attempt = 0
    for k in range(start, len(series)):
        if k in res_at:
            detector.update(res_at[k], k)
        if any(detector.state.triggered) and k >= next_attempt:
            trainer = lambda segs, m=model: narx.train(  # noqa: E731
                segs, m.m, m.n, m.hidden_width, narx.TrainConfig(seed=cfg.seed, restarts=cfg.training.restarts))
            try:
                new_model, state = det.retrain_if_triggered(detector.state, series[:k + 1], cfg.validity,
                                                            trainer, dcfg)
            except RetrainDeferred as exc:
                events.append({"event": "retrain_deferred", "k": k, "reason": str(exc)})
                next_attempt = k + dcfg.N_D
            else:
                model = new_model
                detector.state = state
                narx.save_model(model, out / f"narx_retrained_k{k}.json")
                events.append({"event": "retrained", "k": k, "cost": model.cost})
                residuals, t_index = narx.proportional_residuals(model, series)
                res_at = dict(zip(t_index.tolist(), residuals))
                components = replace(components, narx=model)
        hist = series[:k]
        comp = replace(components, regulatory=twin.prepare_regulatory(components.regulatory, hist, cfg.estimation))
        pred = twin.rollout_closed_loop(comp, hist, cfg.y_lim, horizon)
        trace.extend(twin.trace_rows(k, pred))
        if bounds is not None:
            try:
                best, table = twin.evaluate_supervisor(comp, hist, bounds, horizon=horizon)
                decisions.append((k, *map(float, best), min(r.score for r in table if r.feasible)))
            except SagTwinError as exc:
                decisions.append((k, float("nan"), float("nan"), float("nan")))
                logger.info("supervisor at k=%d: %s", k, exc)
    twin.write_trace(trace, out / "trace.csv")
    det.write_log(detector.log, out / "detection_log.csv")
    all_events = sorted(detector.events + events, key=lambda e: e["k"])  # stable: trigger before its retrain
    (out / "events.jsonl").write_text("")
    det.append_events(all_events, out / "events.jsonl")
    if bounds is not None:
        with open(out / "decisions.csv", "w") as fh:
            fh.write("k,y1_lim,y2_lim,score\n")
            for row in decisions:
                fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")
    return detector, all_events


def cmd_run(args, cfg):
    components, baselines = _load_components(cfg, args.models or cfg.paths.model_dir)
    series = _series_for_run(args.dataset, cfg)
    detector, events = run_loop(components, baselines, series, cfg, args.out or cfg.paths.out_dir)
    n_trig = sum(1 for e in events if e["event"] == "retrain_trigger")
    print(f"{len(series)} samples, {n_trig} retraining trigger(s); first trigger per CV: "
          + ", ".join(f"{cv}={k}" for cv, k in zip(det.CV_LABELS, detector.first_trigger)))
    return EXIT_OK


def cmd_report(args, cfg):
    components, _ = _load_components(cfg, args.models or cfg.paths.model_dir)
    series = _series_for_run(args.dataset, cfg)
    y_hat, y_meas, _ = twin.collect_predictions(components, series, cfg.y_lim, cfg.horizon,
                                                estimation=cfg.estimation)
    stats = twin.error_report(y_hat, y_meas)
    out = Path(args.out or cfg.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    twin.write_report(stats, out / "error_report.csv")
    twin.write_histograms(stats, out / "error_histogram.csv")
    for s in stats:
        print(f"horizon {s.horizon} {s.cv}: mean {s.mean:+.4%} std {s.std:.4%} "
              f"99% [{s.p005:+.4%}, {s.p995:+.4%}]")
    if cfg.quality_horizon <= horizon_count(stats):
        gate = twin.quality_gate(stats, cfg.quality_bands, cfg.quality_horizon)
        print("quality gate at horizon", cfg.quality_horizon, ":",
              ", ".join(f"{cv} {'pass' if ok else 'fail'}" for cv, ok in gate.items()))
    return EXIT_OK


def horizon_count(stats):
    return max(s.horizon for s in stats)


def cmd_scenario(args, cfg):
    if args.action == "generate":
        plant = scenarios.SyntheticPlant()
        sched = None
        if args.limit_range:
            rng = np.random.default_rng(cfg.seed + 50)
            sched = scenarios.random_limit_schedule(rng, args.steps, y1_range=tuple(args.limit_range),
                                                    y2_lim=cfg.y_lim[1])
        series = scenarios.generate(plant, _rulebase(cfg), steps=args.steps, seed=cfg.seed,
                                    y_lim=cfg.y_lim, limit_schedule=sched)
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        pipeline.write_csv(series, out)
        print(f"{len(series)} synthetic records -> {out}")
    elif args.action == "make":
        if args.kind == "wear":
            sc = scenarios.wear_scenario(args.months)
        elif args.kind == "hardness":
            sc = scenarios.hardness_scenario(args.increase, onset=args.onset, ramp=args.ramp)
        else:
            sc = scenarios.identity_scenario()
        scenarios.save_scenario(sc, args.out)
        print(f"scenario {sc.name} -> {args.out}")
    else:  # apply
        path = args.scenario_file or cfg.paths.scenario
        if not path:
            raise ArtifactError("no scenario file given")
        series = _load_dataset(args.dataset)
        series = pipeline.SampledSeries.concatenate(series) if len(series) > 1 else series[0]
        pipeline.write_csv(scenarios.apply(scenarios.load_scenario(path), series), args.out)
        print(f"applied {path} -> {args.out}")
    return EXIT_OK


# -- argument parsing -----------------------------------------------------------

def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--horizon", type=int, metavar="N", help="prediction steps")
    p.add_argument("--scenario", help="disturbance scenario JSON applied to the dataset")
    p.add_argument("--supervisor", choices=("on", "off"), help="score candidate CV limits every sample")
    p.add_argument("--rulebase", help="expert rule base JSON (default: shipped illustrative one)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser():
    common = _common()
    parser = argparse.ArgumentParser(prog="sagtwin", description="SAG mill closed-loop digital twin")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="filter and downsample a raw 5 s CSV")
    p.add_argument("raw")
    p.add_argument("--out", help="output directory (conditioned.csv + manifest.csv)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", parents=[common], help="identify the regulatory model and train the NARX")
    p.add_argument("dataset")
    p.add_argument("--models", help="artifact directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", parents=[common], help="moving-horizon twin with drift detection")
    p.add_argument("dataset")
    p.add_argument("--models")
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", parents=[common], help="proportional error statistics per horizon")
    p.add_argument("dataset")
    p.add_argument("--models")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("scenario", parents=[common], help="synthetic data and disturbance scenarios")
    act = p.add_subparsers(dest="action", required=True)
    g = act.add_parser("generate", parents=[common], help="closed-loop synthetic plant data")
    g.add_argument("--steps", type=int, default=2000)
    g.add_argument("--limit-range", type=float, nargs=2, metavar=("LOW", "HIGH"),
                   help="redraw the pressure limit in this range every 240 samples")
    g.add_argument("--out", required=True)
    m = act.add_parser("make", parents=[common], help="write a scenario file")
    m.add_argument("kind", choices=("wear", "hardness", "identity"))
    m.add_argument("--months", type=float, default=1.0)
    m.add_argument("--increase", type=float, default=0.10)
    m.add_argument("--onset", type=int, default=0)
    m.add_argument("--ramp", type=int, default=0)
    m.add_argument("--out", required=True)
    a = act.add_parser("apply", parents=[common], help="apply a scenario file to a dataset")
    a.add_argument("dataset")
    a.add_argument("--scenario-file")
    a.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scenario)
    return parser


def resolve_config(args, environ=None):
    cfg = cfgmod.load(args.config, environ)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.horizon is not None:
        cfg = replace(cfg, horizon=replace(cfg.horizon, N=args.horizon))
    if args.scenario is not None:
        cfg = replace(cfg, paths=replace(cfg.paths, scenario=args.scenario))
    if args.rulebase is not None:
        cfg = replace(cfg, paths=replace(cfg.paths, rulebase=args.rulebase))
    if args.supervisor is not None:
        cfg = replace(cfg, supervisor=replace(cfg.supervisor, enabled=args.supervisor == "on"))
    return cfg


def main(argv=None, environ=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args, environ)
        return args.func(args, cfg)
    except InsufficientSegments as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_SEGMENTS
    except MalformedRow as exc:
        print(f"error: malformed row at {exc}", file=sys.stderr)
        return EXIT_MALFORMED
    except (IdentificationFailed, TrainingDiverged, SegmentTooShort, InsufficientData) as exc:
        print(f"error: training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except ArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except SagTwinError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
