"""Run-directory reporting: a session-accuracy table on stdout, a delimited
curve file, and rendered figures (accuracy-vs-session curve, final-session
confusion heatmap) written next to the run's csv outputs."""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import DataError
from .protocol import compute_metrics

PNG_METADATA = {"Software": "fscl-report"}


def read_metrics(run_dir):
    """Rows of (session, acc, seen_classes) from a run directory."""
    path = Path(run_dir) / "metrics.csv"
    if not path.is_file():
        raise DataError(f"report: no metrics.csv under {run_dir}")
    rows = []
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "session,acc,seen_classes":
        raise DataError(f"report: unexpected metrics.csv header in {run_dir}")
    for line in lines[1:]:
        if not line:
            continue
        session, acc, seen = line.split(",")
        rows.append((int(session), float(acc), int(seen)))
    if not rows:
        raise DataError(f"report: metrics.csv under {run_dir} has no rows")
    return rows


def resolve_reference(reference):
    """A --reference value is either a number or another run directory, in
    which case its final-session accuracy is used."""
    if reference is None:
        return None
    try:
        return float(reference)
    except ValueError:
        rows = read_metrics(reference)
        return rows[-1][1]


def read_final_confusion(run_dir, last_session):
    path = Path(run_dir) / f"confusion_t{last_session}.csv"
    if not path.is_file():
        return None, None
    lines = path.read_text(encoding="utf-8").splitlines()
    labels = [int(v) for v in lines[0].split(",")]
    matrix = np.asarray([[int(v) for v in line.split(",")] for line in lines[1:]],
                        dtype=np.int64)
    return labels, matrix


def write_curve(run_dir, rows):
    path = Path(run_dir) / "curve.csv"
    with open(path, "w", encoding="utf-8") as f:
        f.write("session,acc\n")
        for session, acc, _ in rows:
            f.write(f"{session},{acc!r}\n")
    return path


def render_figures(run_dir, rows):
    """Accuracy curve plus, when available, the final confusion heatmap."""
    run_dir = Path(run_dir)
    sessions = [r[0] for r in rows]
    accs = [r[1] for r in rows]

    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(sessions, accs, marker="o", lw=1.5)
    ax.set_xlabel("session")
    ax.set_ylabel("accuracy (%)")
    ax.set_xticks(sessions)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(run_dir / "accuracy_curve.png", dpi=150, metadata=PNG_METADATA)
    plt.close(fig)

    labels, matrix = read_final_confusion(run_dir, sessions[-1])
    if matrix is None:
        return
    fig, ax = plt.subplots(figsize=(4.2, 3.6))
    im = ax.imshow(matrix, cmap="Blues")
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(f"confusion, session {sessions[-1]}")
    if len(labels) <= 20:
        ax.set_xticks(range(len(labels)), [str(c) for c in labels], fontsize=6)
        ax.set_yticks(range(len(labels)), [str(c) for c in labels], fontsize=6)
    fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    fig.savefig(run_dir / f"confusion_t{sessions[-1]}.png", dpi=150,
                metadata=PNG_METADATA)
    plt.close(fig)


def render_report(run_dir, reference=None, emit=print, figures=True):
    """Print the session table and summary; write curve.csv and figures."""
    rows = read_metrics(run_dir)
    ref = resolve_reference(reference)
    report = compute_metrics([r[1] for r in rows], reference_final=ref)
    emit(f"{'session':>8}  {'acc(%)':>8}  {'seen':>6}")
    for session, acc, seen in rows:
        emit(f"{session:>8}  {acc:>8.2f}  {seen:>6}")
    emit(f"Avg: {report.avg:.2f}")
    emit(f"KR: {report.kr:.2f}")
    if report.delta_final is not None:
        emit(f"DeltaFinal: {report.delta_final:.2f} (reference {ref:.2f})")
    write_curve(run_dir, rows)
    if figures:
        render_figures(run_dir, rows)
    return report
