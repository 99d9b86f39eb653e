"""Evaluation metrics: ROC AUC (Mann-Whitney with tie handling) and accuracy."""

from __future__ import annotations

import numpy as np

__all__ = ["auc", "accuracy", "write_auc_report"]


def auc(scores, labels) -> float:
    """Probability a random positive outscores a random negative; ties count 0.5.

    Sort-based: average ranks within tied groups, then the Mann-Whitney
    statistic. Requires at least one example of each class.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length 1-D sequences")
    npos = int(np.sum(labels == 1))
    nneg = int(np.sum(labels == 0))
    if npos == 0 or nneg == 0:
        raise ValueError("AUC needs at least one positive and one negative")

    order = np.argsort(scores, kind="stable")
    s = scores[order]
    ranks = np.empty(s.size, dtype=np.float64)
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and s[j + 1] == s[i]:
            j += 1
        ranks[i:j + 1] = 0.5 * (i + j) + 1.0  # average 1-based rank of the tied run
        i = j + 1
    pos_rank_sum = float(ranks[labels[order] == 1].sum())
    return (pos_rank_sum - npos * (npos + 1) / 2.0) / (npos * nneg)


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    """Fraction of labels matched by thresholding scores at `threshold`."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pred = (scores >= threshold).astype(labels.dtype)
    return float(np.mean(pred == labels))


def write_auc_report(path, class_names, aucs, fmt: str = "csv") -> str:
    """Per-class AUC table plus the average row, as CSV or markdown.

    Returns the rendered text; pass path=None to skip writing.
    """
    if len(class_names) != len(aucs):
        raise ValueError("one AUC per class name")
    rows = list(zip(class_names, aucs)) + [("average", float(np.mean(aucs)))]
    if fmt == "csv":
        text = "class,auc\n" + "".join(f"{n},{a:.6f}\n" for n, a in rows)
    elif fmt == "markdown":
        text = "| class | AUC |\n|---|---|\n" + "".join(f"| {n} | {a:.4f} |\n" for n, a in rows)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
