"""Threshold sweeps and per-user precision/recall.

The matching rule mirrors the prediction engine: an image is assigned to
the user whose reconstructor yields the minimum summed squared error,
unless that minimum exceeds the threshold, in which case it matches
nobody. For user i, a class-i image assigned to i is a true positive;
assigned elsewhere (or to nobody) a false negative; another user's image
assigned to i is a false positive.

Recall = TP / (TP + FN), Precision = TP / (TP + FP).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


def score_matrix(models: dict, images: np.ndarray) -> np.ndarray:
    """(n_images, n_users) dissimilarities, column order = sorted user ids."""
    ids = sorted(models)
    return np.stack([models[uid].dissimilarities(images) for uid in ids], axis=1)


def assign(scores: np.ndarray, user_ids: list, tau: float) -> np.ndarray:
    """Predicted user id per image, 0 for no match (min score above tau)."""
    best = np.argmin(scores, axis=1)
    best_score = scores[np.arange(len(scores)), best]
    out = np.array([user_ids[b] for b in best])
    out[best_score > tau] = 0
    return out


@dataclass
class UserMetrics:
    user_id: int
    tp: int
    fn: int
    fp: int
    tn: int

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if (self.tp + self.fn) else 0.0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if (self.tp + self.fp) else 1.0


def metrics_at(scores_by_class: dict, user_ids: list, tau: float) -> list[UserMetrics]:
    out = []
    predictions = {
        true_id: assign(scores, user_ids, tau)
        for true_id, scores in scores_by_class.items()
    }
    for uid in user_ids:
        tp = int(np.sum(predictions[uid] == uid))
        fn = int(np.sum(predictions[uid] != uid))
        fp = tn = 0
        for other, preds in predictions.items():
            if other == uid:
                continue
            fp += int(np.sum(preds == uid))
            tn += int(np.sum(preds != uid))
        out.append(UserMetrics(uid, tp, fn, fp, tn))
    return out


def blocking_rates(scores_by_class: dict, user_ids: list, tau: float) -> dict:
    """Per-reconstructor rate of blocking other users' uploads.

    For reconstructor i: the fraction of images that belong to any other
    class but get assigned to class i at this threshold (and would hence
    be blocked for their uploader).
    """
    rates = {}
    for uid in user_ids:
        hits = total = 0
        for other, scores in scores_by_class.items():
            if other == uid:
                continue
            preds = assign(scores, user_ids, tau)
            hits += int(np.sum(preds == uid))
            total += len(preds)
        rates[uid] = hits / total if total else 0.0
    return rates


def sweep(scores_by_class: dict, user_ids: list, taus) -> list[dict]:
    rows = []
    for tau in taus:
        ms = metrics_at(scores_by_class, user_ids, float(tau))
        rates = blocking_rates(scores_by_class, user_ids, float(tau))
        row = {"tau": float(tau)}
        total_fp = sum(m.fp for m in ms)
        total_fn = sum(m.fn for m in ms)
        row["total_fp"] = total_fp
        row["total_fn"] = total_fn
        for m in ms:
            row[f"recall_{m.user_id}"] = m.recall
            row[f"precision_{m.user_id}"] = m.precision
            row[f"block_rate_{m.user_id}"] = rates[m.user_id]
        rows.append(row)
    return rows


def calibrate_tau(rows: list[dict]) -> float:
    """Threshold with the most balanced false positive/negative counts."""
    best = min(rows, key=lambda r: (abs(r["total_fp"] - r["total_fn"]), r["tau"]))
    return best["tau"]


def write_csv(rows: list[dict], path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def plot_sweep(rows: list[dict], user_ids: list, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    taus = [r["tau"] for r in rows]
    fig, (ax_r, ax_p, ax_b) = plt.subplots(1, 3, figsize=(12, 3.5), sharex=True)
    for uid in user_ids:
        ax_r.plot(taus, [r[f"recall_{uid}"] for r in rows], label=f"user {uid}")
        ax_p.plot(taus, [r[f"precision_{uid}"] for r in rows], label=f"user {uid}")
        ax_b.plot(taus, [r[f"block_rate_{uid}"] for r in rows], label=f"user {uid}")
    ax_r.set_xlabel("threshold")
    ax_r.set_ylabel("recall")
    ax_p.set_xlabel("threshold")
    ax_p.set_ylabel("precision")
    ax_b.set_xlabel("threshold")
    ax_b.set_ylabel("cross-user blocking rate")
    ax_p.legend(fontsize=7)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
