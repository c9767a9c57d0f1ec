"""Validation scoring: concordance for valence/arousal, macro F1 elsewhere.

The combined score sums three parts: mean concordance over the two affect
dimensions, macro F1 over the 8 expression classes, and macro F1 over the
12 action units.  Per-task validity masks exclude a sample only from the
tasks it lacks labels for.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_model import N_ACTION_UNITS, N_EXPRESSION_CLASSES
from .errors import DataError
from .losses import ccc


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int


def f1_from_counts(counts: ConfusionCounts) -> float:
    """2PR/(P+R) with any zero denominator collapsing that quantity to 0."""
    precision = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 0.0
    recall = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def macro_f1(
    pred: np.ndarray, gold: np.ndarray, n_classes: int
) -> tuple[float, np.ndarray]:
    """Unweighted mean F1 over all classes, absent classes scoring 0."""
    pred = np.asarray(pred)
    gold = np.asarray(gold)
    if pred.shape != gold.shape:
        raise DataError(f"label shape mismatch: {pred.shape} vs {gold.shape}")
    if pred.size and not (
        0 <= pred.min() and pred.max() < n_classes and 0 <= gold.min() and gold.max() < n_classes
    ):
        raise DataError(f"labels outside [0, {n_classes})")
    per_class = np.zeros(n_classes)
    for c in range(n_classes):
        tp = int(np.count_nonzero((pred == c) & (gold == c)))
        fp = int(np.count_nonzero((pred == c) & (gold != c)))
        fn = int(np.count_nonzero((pred != c) & (gold == c)))
        per_class[c] = f1_from_counts(ConfusionCounts(tp, fp, fn))
    return float(per_class.mean()), per_class


def au_macro_f1(
    probs: np.ndarray, gold: np.ndarray, mask: np.ndarray | None = None
) -> tuple[float, np.ndarray]:
    """Binary F1 per unit (threshold 0.5, ties positive), averaged over units."""
    probs = np.asarray(probs, dtype=np.float64)
    gold = np.asarray(gold)
    n = probs.shape[0]
    if mask is None:
        mask = np.ones(n, dtype=bool)
    idx = np.flatnonzero(mask)
    pred = probs[idx] >= 0.5
    truth = gold[idx] == 1
    per_unit = np.zeros(N_ACTION_UNITS)
    for u in range(N_ACTION_UNITS):
        tp = int(np.count_nonzero(pred[:, u] & truth[:, u]))
        fp = int(np.count_nonzero(pred[:, u] & ~truth[:, u]))
        fn = int(np.count_nonzero(~pred[:, u] & truth[:, u]))
        per_unit[u] = f1_from_counts(ConfusionCounts(tp, fp, fn))
    return float(per_unit.mean()), per_unit


@dataclass(frozen=True)
class MtlScore:
    p_va: float
    p_exp: float
    p_au: float
    p_mtl: float
    ccc_valence: float
    ccc_arousal: float
    exp_f1: tuple[float, ...]
    au_f1: tuple[float, ...]
    va_degenerate: bool


def mtl_score(
    pred_va: np.ndarray,
    gold_va: np.ndarray,
    va_mask: np.ndarray,
    pred_exp: np.ndarray,
    gold_exp: np.ndarray,
    exp_mask: np.ndarray,
    au_probs: np.ndarray,
    gold_au: np.ndarray,
    au_mask: np.ndarray,
) -> MtlScore:
    """Combined three-task score over one evaluation set.

    Fewer than two valence/arousal-valid samples leave both concordances
    undefined; that part scores 0 and the record is flagged degenerate.
    """
    va_idx = np.flatnonzero(va_mask)
    if len(va_idx) >= 2:
        ccc_v = ccc(pred_va[va_idx, 0], gold_va[va_idx, 0]).rho
        ccc_a = ccc(pred_va[va_idx, 1], gold_va[va_idx, 1]).rho
        p_va = (ccc_v + ccc_a) / 2.0
        degenerate = False
    else:
        ccc_v = ccc_a = p_va = 0.0
        degenerate = True
    exp_idx = np.flatnonzero(exp_mask)
    p_exp, exp_f1 = macro_f1(
        np.asarray(pred_exp)[exp_idx], np.asarray(gold_exp)[exp_idx], N_EXPRESSION_CLASSES
    )
    p_au, au_f1 = au_macro_f1(au_probs, gold_au, au_mask)
    return MtlScore(
        p_va=p_va,
        p_exp=p_exp,
        p_au=p_au,
        p_mtl=p_va + p_exp + p_au,
        ccc_valence=ccc_v,
        ccc_arousal=ccc_a,
        exp_f1=tuple(float(v) for v in exp_f1),
        au_f1=tuple(float(v) for v in au_f1),
        va_degenerate=degenerate,
    )
