"""Single-shot CMC evaluation with trial averaging."""
import csv
from dataclasses import dataclass

import numpy as np

from .errors import DatasetError, ShapeError


@dataclass
class CmcCurve:
    """``ranks[k-1]`` is the fraction of probes whose match is in the top ``k``."""

    ranks: np.ndarray
    n_probes: int
    gallery_size: int

    def at(self, k):
        return float(self.ranks[k - 1])


def build_single_shot(test_set, seed):
    """Gallery: one seeded camera-B image per identity. Probes: every camera-A image.

    Both are lists of (identity_id, image) in dataset order.
    """
    rng = np.random.default_rng(seed)
    probes, gallery = [], []
    for ident in test_set.identities:
        cam_a, cam_b = ident.camera("A"), ident.camera("B")
        if not cam_a or not cam_b:
            raise DatasetError(f"identity {ident.identity_id!r} lacks a camera-A or camera-B image")
        pick = cam_b[int(rng.integers(len(cam_b)))]
        gallery.append((ident.identity_id, pick.image))
        probes.extend((ident.identity_id, rec.image) for rec in cam_a)
    return probes, gallery


class OracleScorer:
    """p = 1 for same identity, 0 otherwise (``invert=True`` flips it)."""

    def __init__(self, invert=False):
        self.invert = invert

    def score_matrix(self, probes, gallery):
        same = np.array([[p == g for g, _ in gallery] for p, _ in probes], dtype=np.float64)
        return 1.0 - same if self.invert else same


def match_ranks(scores, probe_ids, gallery_ids):
    """0-based rank of the true match for each probe; ties broken by gallery index."""
    scores = np.asarray(scores, dtype=np.float64)
    index = {g: j for j, g in enumerate(gallery_ids)}
    if len(index) != len(gallery_ids):
        raise DatasetError("gallery identities must be unique")
    ranks = np.empty(len(probe_ids), dtype=np.int64)
    cols = np.arange(len(gallery_ids))
    for i, pid in enumerate(probe_ids):
        if pid not in index:
            raise DatasetError(f"probe identity {pid!r} is absent from the gallery")
        order = np.lexsort((cols, -scores[i]))
        ranks[i] = int(np.flatnonzero(order == index[pid])[0])
    return ranks


def cmc_from_scores(scores, probe_ids, gallery_ids):
    if len(probe_ids) == 0 or len(gallery_ids) == 0:
        raise ShapeError("CMC needs non-empty probes and gallery")
    scores = np.asarray(scores)
    if scores.shape != (len(probe_ids), len(gallery_ids)):
        raise ShapeError(f"score matrix {scores.shape} != ({len(probe_ids)}, {len(gallery_ids)})")
    ranks = match_ranks(scores, probe_ids, gallery_ids)
    hist = np.bincount(ranks, minlength=len(gallery_ids))
    return CmcCurve(np.cumsum(hist) / len(probe_ids), len(probe_ids), len(gallery_ids))


def cmc_single_shot(scorer, probes, gallery):
    """Rank the gallery for each probe by ``scorer.score_matrix(probes, gallery)`` (p, descending)."""
    if not probes or not gallery:
        raise ShapeError("CMC needs non-empty probes and gallery")
    scores = scorer.score_matrix(probes, gallery)
    return cmc_from_scores(scores, [p for p, _ in probes], [g for g, _ in gallery])


def average_trials(curves):
    """Element-wise mean curve and per-rank (population) standard deviation."""
    if not curves:
        raise ShapeError("no curves to average")
    lengths = {len(c.ranks) for c in curves}
    if len(lengths) != 1:
        raise ShapeError(f"cannot average curves of different lengths {sorted(lengths)}")
    stack = np.stack([c.ranks for c in curves])
    mean = CmcCurve(stack.mean(axis=0), int(round(np.mean([c.n_probes for c in curves]))),
                    curves[0].gallery_size)
    return mean, stack.std(axis=0)


def evaluate_trials(scorer, test_set, trials, seed):
    """CMC per trial (gallery re-drawn with seed + t) and their average."""
    curves = []
    for t in range(trials):
        probes, gallery = build_single_shot(test_set, seed + t)
        curves.append(cmc_single_shot(scorer, probes, gallery))
    mean, std = average_trials(curves)
    return curves, mean, std


REPORT_RANKS = (1, 5, 10)


def report_rows(curve, ranks=REPORT_RANKS):
    """{k: 'xx.xx'} percentages for each requested rank within the gallery size."""
    return {k: f"{100 * curve.at(k):.2f}" for k in ranks if k <= curve.gallery_size}


def report(curve, label="PPMN", ranks=REPORT_RANKS):
    rows = report_rows(curve, ranks)
    head = "Method | " + " | ".join(f"r={k}" for k in rows)
    body = f"{label} | " + " | ".join(rows.values())
    return f"{head}\n{body}\n"


def write_cmc_csv(path, curve):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", "score"])
        for k, v in enumerate(curve.ranks, start=1):
            w.writerow([k, f"{v:.6f}"])
