"""End-to-end experiment runner: build everything from a validated config,
train session by session, and flush the run directory as results arrive so a
failed run still leaves partial outputs behind.

Run directory contents: config.txt (snapshot incl. seed), metrics.csv
(session, acc, seen_classes), summary.csv (avg, kr, delta_final),
confusion_t<T>.csv per session (header row of class ids), train_log.csv
(per-step loss decomposition), model.bfsm (final trained parameters).
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bundle import load_bundle, validate_bundle
from .config import config_to_text
from .data import open_dataset
from .errors import BundleError
from .models import GateNet, MineDiscriminator, StudentModel, save_model
from .protocol import (
    Hyperparams,
    TrainState,
    build_sessions,
    compute_metrics,
    evaluate,
    run_session,
)

# rng stream tags for model construction
STREAM_STUDENT = 0x10
STREAM_DISC = 0x11
STREAM_GATE = 0x12


@dataclass
class ExperimentResult:
    report: object
    stream: object
    state: object
    out_dir: Path


def _fmt(x):
    return repr(float(x))


def write_metrics_row(path, t, acc, seen_count):
    with open(path, "a", encoding="utf-8") as f:
        f.write(f"{t},{_fmt(acc)},{seen_count}\n")


def write_confusion(path, labels, confusion):
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(str(c) for c in labels) + "\n")
        for row in confusion:
            f.write(",".join(str(int(v)) for v in row) + "\n")


def write_summary(path, report):
    delta = "" if report.delta_final is None else _fmt(report.delta_final)
    with open(path, "w", encoding="utf-8") as f:
        f.write("avg,kr,delta_final\n")
        f.write(f"{_fmt(report.avg)},{_fmt(report.kr)},{delta}\n")


def write_train_log(path, entries):
    with open(path, "w", encoding="utf-8") as f:
        f.write("session,epoch,step,ce,bet,total\n")
        for e in entries:
            f.write(f"{e['session']},{e['epoch']},{e['step']},"
                    f"{_fmt(e['ce'])},{_fmt(e['bet'])},{_fmt(e['total'])}\n")


def build_state(cfg, dataset, bundle):
    """Construct the student (and, per the switches, the critics and gate)
    with seeded deterministic initialization."""
    h, w, c = dataset.image_shape
    student = StudentModel(
        height=h, width=w, in_channels=c, channels=list(cfg.channels),
        embed_dim=cfg.embed_dim,
        rng=np.random.default_rng([cfg.seed, STREAM_STUDENT]))
    disc = None
    if cfg.enable_bet:
        scale_dims = [(cfg.channels[l], bundle.scale_dims[l])
                      for l in range(len(cfg.channels))]
        disc = MineDiscriminator(
            scale_dims, d_common=cfg.d_common, conv_channels=cfg.disc_channels,
            rng=np.random.default_rng([cfg.seed, STREAM_DISC]),
            clamp=cfg.score_clamp)
    gate_net = None
    if cfg.enable_iad:
        gate_net = GateNet(
            cfg.embed_dim, bundle.embed_dim, hidden=list(cfg.gate_hidden),
            rng=np.random.default_rng([cfg.seed, STREAM_GATE]))
    return TrainState(student=student, disc=disc, gate_net=gate_net)


def load_run_bundle(cfg, dataset):
    """Load and validate the teacher bundle against the config and dataset;
    returns None when neither module needs a teacher."""
    if not (cfg.enable_bet or cfg.enable_iad):
        return None
    bundle = load_bundle(cfg.bundle)
    problems = validate_bundle(bundle, expected_scales=cfg.num_scales,
                               class_universe=dataset.class_names)
    if problems:
        raise BundleError("bundle failed validation:\n" + "\n".join(problems))
    if len(bundle.records) < len(dataset.labels):
        raise BundleError(
            f"bundle has {len(bundle.records)} records, dataset has "
            f"{len(dataset.labels)} samples")
    return bundle


def run_experiment(cfg, log=None):
    """Execute the full session protocol for one validated config."""
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(config_to_text(cfg), encoding="utf-8")
    metrics_path = out_dir / "metrics.csv"
    metrics_path.write_text("session,acc,seen_classes\n", encoding="utf-8")

    dataset = open_dataset(cfg.dataset)
    bundle = load_run_bundle(cfg, dataset)
    stream = build_sessions(dataset, cfg.base_count, cfg.n_way, cfg.k_shot,
                            cfg.n_incremental, cfg.seed)
    state = build_state(cfg, dataset, bundle)

    accs = []
    confusions = []
    seen_per_session = []
    for t, session in enumerate(stream.sessions, start=1):
        state.student.expand_classifier(session.labels)
        hp = Hyperparams(
            epochs=cfg.epochs_base if t == 1 else cfg.epochs_incremental,
            batch_size=cfg.batch_size,
            lr=cfg.lr if t == 1 else cfg.lr * cfg.incremental_lr_scale,
            lambda_bet=cfg.lambda_bet,
            beta1=cfg.beta1, beta2=cfg.beta2, adam_eps=cfg.adam_eps,
            enable_bet=cfg.enable_bet, enable_iad=cfg.enable_iad)
        run_session(state, dataset, session, bundle, hp, t, cfg.seed)
        seen = stream.seen_labels(t)
        acc, confusion = evaluate(
            state, dataset, stream.test_ids, bundle, seen,
            alpha_override=None if cfg.enable_iad else 1.0)
        accs.append(acc)
        confusions.append(confusion)
        seen_per_session.append(seen)
        write_metrics_row(metrics_path, t, acc, len(seen))
        write_confusion(out_dir / f"confusion_t{t}.csv", seen, confusion)
        if log:
            log(f"session {t}/{stream.num_sessions}: acc {acc:.2f} "
                f"({len(seen)} classes seen)")

    report = compute_metrics(accs, cfg.reference_final)
    report.confusion = confusions
    report.seen = seen_per_session
    write_summary(out_dir / "summary.csv", report)
    write_train_log(out_dir / "train_log.csv", state.train_log)
    trained = [m for m in (state.student, state.disc, state.gate_net) if m is not None]
    save_model(out_dir / "model.bfsm", *trained)
    return ExperimentResult(report=report, stream=stream, state=state,
                            out_dir=out_dir)
