"""Command line entry point.

Subcommands cover the full workflow: synthesize a corpus, train an encoder,
enroll and verify users, batch-evaluate a model, and replay a journey
through the adaptive-enrollment engine. Every command is deterministic
given its flags; randomness only enters through explicit seeds.

Exit codes: 0 success (or verify accept), 1 verify reject, 2 bad arguments,
3 I/O failure, 4 numeric failure during training, 5 unknown user.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import dataio, evaluation, identity, modelio, plots, synth, trainer
from .encoder import EncoderConfig, GaitModel, init_params
from .evaluation import EvalConfig
from .identity import AdaptiveConfig, AdaptiveState, IdentityStore, UnknownUserError
from .signal import StftConfig
from .trainer import NumericalError, TrainConfig

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_REJECT = 1
EXIT_ARGS = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_UNKNOWN_USER = 5


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _merged(file_cfg: dict, section: str, key: str, flag_value, default):
    """Flag beats config file beats built-in default."""
    if flag_value is not None:
        return flag_value
    return file_cfg.get(section, {}).get(key, default)


def _stft_config(file_cfg: dict) -> StftConfig:
    sect = file_cfg.get("stft", {})
    return StftConfig(
        frame_len=int(sect.get("frame_len", 128)),
        hop=int(sect.get("hop", 64)),
        fft_len=int(sect.get("fft_len", 128)),
        db_floor_eps=float(sect.get("db_floor_eps", 1e-12)),
    )


def _check_window(window_sec: float, fs: float, stft_cfg: StftConfig) -> None:
    samples = int(round(window_sec * fs))
    if samples < stft_cfg.frame_len:
        raise ValueError(
            f"window of {window_sec:g} s ({samples} samples) is shorter than "
            f"one STFT frame ({stft_cfg.frame_len} samples)"
        )


def _model_input_shape(stft_cfg: StftConfig, window_sec: float, fs: float) -> tuple[int, int]:
    samples = int(round(window_sec * fs))
    return (stft_cfg.freq_bins, stft_cfg.frames_for(samples))


def _load_model(path: str, stft_cfg: StftConfig, window_sec: float, fs: float) -> GaitModel:
    params = modelio.load_params(Path(path))
    _check_window(window_sec, fs, stft_cfg)
    enc_cfg = EncoderConfig.from_params(params, _model_input_shape(stft_cfg, window_sec, fs))
    return GaitModel(params=params, enc_cfg=enc_cfg, stft_cfg=stft_cfg)


def _manifest_path(data: str) -> Path:
    path = Path(data)
    return path / "manifest.json" if path.is_dir() else path


def _probe_embedding(model: GaitModel, session, window_sec: float) -> np.ndarray:
    """Session-level probe: the renormalized mean of all window embeddings."""
    emb, _ = model.embed_series(session, window_sec, 0.5)
    mean = emb.mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm == 0.0:
        raise ValueError("degenerate probe: window embeddings cancel out")
    return mean / norm


def cmd_synth(args, file_cfg: dict) -> int:
    if args.users < 1:
        raise ValueError("--users must be >= 1")
    if args.duration < 1.0:
        raise ValueError("--duration must be >= 1 second")
    conditions = synth.standard_conditions(args.conditions)
    manifest = synth.generate_dataset(
        n_users=args.users,
        sessions_per_user=args.sessions,
        conditions=conditions,
        duration_sec=args.duration,
        master_seed=args.seed,
        out_dir=Path(args.out),
    )
    print(
        f"wrote {len(manifest)} sessions "
        f"({args.users} users x {args.conditions} conditions x {args.sessions} reps) "
        f"to {args.out}"
    )
    return EXIT_OK


def cmd_train(args, file_cfg: dict) -> int:
    stft_cfg = _stft_config(file_cfg)
    t = file_cfg.get("train", {})
    cfg = TrainConfig(
        temperature=float(t.get("temperature", 0.1)),
        pairs_per_batch=int(t.get("pairs_per_batch", 16)),
        learning_rate=float(t.get("learning_rate", 1e-3)),
        epochs=int(_merged(file_cfg, "train", "epochs", args.epochs, 50)),
        batches_per_epoch=int(t.get("batches_per_epoch", 100)),
        dropout_p=float(t.get("dropout_p", 0.1)),
        window_sec=float(_merged(file_cfg, "train", "window_sec", args.window_sec, 10.0)),
        rng_seed=int(_merged(file_cfg, "train", "rng_seed", args.seed, 0)),
    )
    records = dataio.load_corpus(_manifest_path(args.data))
    if not records:
        raise ValueError("corpus is empty")
    fs = records[0].series.fs
    _check_window(cfg.window_sec, fs, stft_cfg)
    dataset = dataio.windowed_dataset(records, cfg.window_sec, 0.5, stft_cfg)
    users = dataset.users
    if args.folds == 1:
        folds = [evaluation.single_split(users, cfg.rng_seed)]
    elif args.folds == evaluation.N_FOLDS:
        folds = evaluation.kfold_splits(users, cfg.rng_seed, fold_size=args.fold_size)
    else:
        raise ValueError(
            f"--folds must be 1 or {evaluation.N_FOLDS}, got {args.folds}"
        )
    enc_cfg = EncoderConfig(
        input_shape=_model_input_shape(stft_cfg, cfg.window_sec, fs),
        init_seed=cfg.rng_seed,
    )
    log_lines: list[dict] = []
    best = None
    for fold in folds:
        result = trainer.fit(dataset, fold, cfg, enc_cfg)
        for entry in result.log:
            log_lines.append({"fold": fold.index, **entry})
        if best is None or result.best_val_f1 > best.best_val_f1:
            best = result
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    modelio.save_params(best.params, out)
    log_path = Path(f"{args.out}.log")
    log_path.write_text(
        "".join(json.dumps(line) + "\n" for line in log_lines), newline="\n"
    )
    print(
        f"trained {len(folds)} fold(s); best val F1 {best.best_val_f1:.4f} "
        f"at epoch {best.best_epoch}; model -> {out}, log -> {log_path}"
    )
    return EXIT_OK


def cmd_enroll(args, file_cfg: dict) -> int:
    stft_cfg = _stft_config(file_cfg)
    window_sec = float(_merged(file_cfg, "eval", "window_sec", args.window_sec, 10.0))
    model = _load_model(args.model, stft_cfg, window_sec, args.fs)
    session = dataio.load_session_csv(Path(args.session), args.fs)
    store_path = Path(args.store)
    store = IdentityStore.load(store_path) if store_path.exists() else IdentityStore()
    template = identity.enroll(
        model, session, args.user, args.appearance, window_sec, store
    )
    store.save(store_path)
    print(
        f"enrolled {args.user}/{args.appearance} from {template.sample_count} "
        f"windows -> {store_path}"
    )
    return EXIT_OK


def cmd_verify(args, file_cfg: dict) -> int:
    stft_cfg = _stft_config(file_cfg)
    window_sec = float(_merged(file_cfg, "eval", "window_sec", args.window_sec, 10.0))
    model = _load_model(args.model, stft_cfg, window_sec, args.fs)
    session = dataio.load_session_csv(Path(args.session), args.fs)
    store = IdentityStore.load(Path(args.store))
    probe = _probe_embedding(model, session, window_sec)
    result = identity.verify(store, args.user, probe, args.threshold)
    print(
        json.dumps(
            {
                "accept": result.accept,
                "distance": result.distance,
                "matched_appearance": result.matched_appearance,
            }
        )
    )
    return EXIT_OK if result.accept else EXIT_REJECT


def cmd_evaluate(args, file_cfg: dict) -> int:
    stft_cfg = _stft_config(file_cfg)
    e = file_cfg.get("eval", {})
    cfg = EvalConfig(
        enroll_windows=int(e.get("enroll_windows", 10)),
        enroll_overlap=float(e.get("enroll_overlap", 0.5)),
        genuine_trials=int(e.get("genuine_trials", 40)),
        impostor_per_user=int(e.get("impostor_per_user", 15)),
        threshold_step=float(e.get("threshold_step", 0.005)),
        window_sec=float(_merged(file_cfg, "eval", "window_sec", args.window_sec, 10.0)),
        rng_seed=int(_merged(file_cfg, "eval", "rng_seed", args.seed, 0)),
    )
    records = dataio.load_corpus(_manifest_path(args.data))
    if not records:
        raise ValueError("corpus is empty")
    fs = records[0].series.fs
    model = _load_model(args.model, stft_cfg, cfg.window_sec, fs)
    sessions = {
        uid: [rec.series for rec in recs]
        for uid, recs in dataio.sessions_by_user(records).items()
    }
    report, _ = evaluation.evaluate_model(model, sessions, cfg)
    report_path = Path(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(json.dumps(report, indent=2) + "\n", newline="\n")
    artifacts = plots.render_report_artifacts(report, report_path)
    print(
        f"evaluated {len(report['per_user'])} users: mean F1 {report['mean_f1']:.4f} "
        f"at theta {report['best_theta']:.3f}, EER {report['eer']:.4f}"
    )
    print(f"report -> {report_path}; artifacts -> {', '.join(str(p) for p in artifacts)}")
    return EXIT_OK


def cmd_adaptive(args, file_cfg: dict) -> int:
    a = file_cfg.get("adaptive", {})
    cfg = AdaptiveConfig(
        trigger_threshold=float(_merged(file_cfg, "adaptive", "trigger_threshold", args.trigger, 0.3)),
        verify_threshold=float(_merged(file_cfg, "adaptive", "verify_threshold", args.verify, 0.24)),
        consecutive_windows=int(a.get("consecutive_windows", 3)),
        stability_span=int(a.get("stability_span", 5)),
    )
    stft_cfg = _stft_config(file_cfg)
    window_sec = float(_merged(file_cfg, "eval", "window_sec", args.window_sec, 10.0))
    model = _load_model(args.model, stft_cfg, window_sec, args.fs)
    journey = dataio.load_session_csv(Path(args.journey), args.fs)
    store_path = Path(args.store)
    store = IdentityStore.load(store_path)
    store.record(args.user)  # fail fast with exit 5 before any work
    emb, intervals = model.embed_series(journey, window_sec, 0.5)
    state = AdaptiveState(cfg)
    accepted = 0
    for wi in range(emb.shape[0]):
        t_start = float(intervals[wi, 0])
        if args.impostor:
            result = identity.verify(store, args.user, emb[wi], cfg.verify_threshold)
            event, distance = "none", result.distance
            accepted += int(result.accept)
        else:
            stamp = datetime.fromtimestamp(t_start, tz=timezone.utc).isoformat(
                timespec="seconds"
            )
            out = identity.adaptive_step(
                state, store, args.user, emb[wi], in_ear=True, cfg=cfg, now=stamp
            )
            event, distance = out.event, out.distance
        print(
            json.dumps(
                {"window": wi, "t_start": t_start, "event": event, "distance": distance}
            )
        )
    if not args.impostor:
        accepted = sum(
            int(identity.verify(store, args.user, emb[wi], cfg.verify_threshold).accept)
            for wi in range(emb.shape[0])
        )
        store.save(store_path)
    summary = {
        "windows": int(emb.shape[0]),
        "templates_added": 0 if args.impostor else len(state.added),
        "accept_rate": accepted / emb.shape[0],
        "impostor": bool(args.impostor),
    }
    print(json.dumps(summary))
    return EXIT_OK


def _add_common_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", required=True, help="model file path")
    p.add_argument("--window-sec", type=float, default=None,
                   help="window duration in seconds (default 10)")
    p.add_argument("--fs", type=float, default=100.0,
                   help="sample rate of the session CSV in Hz (default 100)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gaitgate",
        description="Gait-based user recognition: synthesize, train, enroll, verify, evaluate.",
    )
    parser.add_argument("--config", default=None, help="TOML config file (flags win)")
    parser.add_argument(
        "--threads",
        type=int,
        default=None,
        help="max internal threads (default: GAITGATE_THREADS or all cores); "
        "never changes results",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a deterministic synthetic corpus")
    p.add_argument("--users", type=int, required=True, help="number of users")
    p.add_argument("--conditions", type=int, default=4,
                   help="shoe/surface grid cells to use, 1..8 (default 4)")
    p.add_argument("--sessions", type=int, default=1,
                   help="sessions per user per condition (default 1)")
    p.add_argument("--duration", type=float, default=300.0,
                   help="seconds per session (default 300)")
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the encoder on a corpus")
    p.add_argument("--data", required=True, help="manifest path or corpus directory")
    p.add_argument("--folds", type=int, default=1,
                   help="1 for a single split, 6 for k-fold (default 1)")
    p.add_argument("--fold-size", type=int, default=8,
                   help="users per fold with --folds 6 (default 8)")
    p.add_argument("--window-sec", type=float, default=None,
                   help="training window seconds (default 10)")
    p.add_argument("--epochs", type=int, default=None, help="epochs (default 50)")
    p.add_argument("--seed", type=int, default=None, help="training seed (default 0)")
    p.add_argument("--out", required=True, help="output model file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enroll", help="enroll a user from a session CSV")
    _add_common_model_flags(p)
    p.add_argument("--session", required=True, help="session CSV path")
    p.add_argument("--user", required=True, help="user id")
    p.add_argument("--appearance", default="primary",
                   help="appearance id (default 'primary')")
    p.add_argument("--store", required=True, help="identity store JSON path")
    p.set_defaults(func=cmd_enroll)

    p = sub.add_parser("verify", help="verify a session against an enrolled user")
    _add_common_model_flags(p)
    p.add_argument("--session", required=True, help="session CSV path")
    p.add_argument("--user", required=True, help="claimed user id")
    p.add_argument("--store", required=True, help="identity store JSON path")
    p.add_argument("--threshold", type=float, default=0.24,
                   help="accept threshold, cosine distance (default 0.24)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("evaluate", help="run the full per-user evaluation protocol")
    p.add_argument("--model", required=True, help="model file path")
    p.add_argument("--data", required=True, help="manifest path or corpus directory")
    p.add_argument("--report", required=True, help="output report JSON path")
    p.add_argument("--window-sec", type=float, default=None,
                   help="window duration seconds (default 10)")
    p.add_argument("--seed", type=int, default=None, help="protocol seed (default 0)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("adaptive", help="replay a journey through adaptive enrollment")
    _add_common_model_flags(p)
    p.add_argument("--journey", required=True, help="journey session CSV path")
    p.add_argument("--user", required=True, help="wearer user id")
    p.add_argument("--store", required=True, help="identity store JSON path")
    p.add_argument("--trigger", type=float, default=None,
                   help="adaptive trigger distance (default 0.3)")
    p.add_argument("--verify", type=float, default=None,
                   help="verification distance (default 0.24)")
    p.add_argument("--impostor", action="store_true",
                   help="score only, never adapt; accept_rate is then a FAR estimate")
    p.set_defaults(func=cmd_adaptive)
    return parser


def _resolve_threads(flag_value: int | None) -> int:
    if flag_value is None:
        env = os.environ.get("GAITGATE_THREADS")
        flag_value = int(env) if env else (os.cpu_count() or 1)
    if flag_value < 1:
        raise ValueError("--threads must be >= 1")
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(limits=flag_value)
    except ImportError:
        log.debug("threadpoolctl not installed; thread cap not applied to BLAS")
    return flag_value


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        _resolve_threads(args.threads)
        file_cfg = _load_config_file(args.config)
        return args.func(args, file_cfg)
    except UnknownUserError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return EXIT_UNKNOWN_USER
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except modelio.ModelFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGS


if __name__ == "__main__":
    raise SystemExit(main())
