"""Score-level and decision-level combination of classifier outputs.

Scores live in probes x classes matrices with an explicit polarity, since
the matcher emits lower-is-better evidence while likelihood-style fusion
rules expect higher-is-better values.  The fixed rules (product, mean,
median, max, min), majority voting, and the trained convex rule
alpha * A + (1 - alpha) * B all operate entrywise across systems.
"""

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np


LOWER = "lower_is_better"
HIGHER = "higher_is_better"

SCORE_RULES = ("product", "mean", "median", "max", "min")

_PRODUCT_FLOOR = 1e-12


class NormalizationError(ValueError):
    """Raised when a probe row cannot be normalized (constant scores)."""


@dataclass(frozen=True)
class ScoreMatrix:
    """Match scores for P probes against C classes, plus score polarity."""

    scores: np.ndarray
    polarity: str = LOWER
    class_ids: tuple = ()
    probe_ids: tuple = ()

    def __post_init__(self):
        m = np.array(self.scores, dtype=np.float64, copy=True)
        if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
            raise ValueError(f"scores must be a nonempty 2D matrix, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("scores must all be finite")
        if self.polarity not in (LOWER, HIGHER):
            raise ValueError(f"unknown polarity {self.polarity!r}")
        m.flags.writeable = False
        object.__setattr__(self, "scores", m)
        cids = tuple(self.class_ids) if self.class_ids else tuple(range(m.shape[1]))
        pids = tuple(self.probe_ids) if self.probe_ids else tuple(range(m.shape[0]))
        if len(cids) != m.shape[1]:
            raise ValueError("class_ids length must match the class count")
        if len(pids) != m.shape[0]:
            raise ValueError("probe_ids length must match the probe count")
        object.__setattr__(self, "class_ids", cids)
        object.__setattr__(self, "probe_ids", pids)

    @property
    def probes(self) -> int:
        return self.scores.shape[0]

    @property
    def classes(self) -> int:
        return self.scores.shape[1]


def _check_same_frame(matrices) -> None:
    first = matrices[0]
    for m in matrices[1:]:
        if m.scores.shape != first.scores.shape:
            raise ValueError(
                f"score matrix shapes differ: {m.scores.shape} vs {first.scores.shape}"
            )
        if m.polarity != first.polarity:
            raise ValueError("score matrices have mixed polarity")
        if m.class_ids != first.class_ids:
            raise ValueError("score matrices have mismatched class ids")


def to_higher_is_better(m: ScoreMatrix) -> ScoreMatrix:
    """Negate lower-is-better scores so fusion rules see likelihood-like
    values; already-higher matrices pass through unchanged."""
    if m.polarity == HIGHER:
        return m
    return ScoreMatrix(-m.scores, HIGHER, m.class_ids, m.probe_ids)


def normalize_scores(m: ScoreMatrix, scheme: str) -> ScoreMatrix:
    """Per-probe row normalization: "zscore", "minmax", or "none".

    Both schemes are strictly increasing affine maps per row, so the
    per-probe ranking (argmin and argmax) is unchanged.
    """
    if scheme == "none":
        return m
    s = m.scores
    if scheme == "zscore":
        mean = s.mean(axis=1, keepdims=True)
        std = s.std(axis=1, ddof=1, keepdims=True)
        bad = np.nonzero(std.ravel() == 0)[0]
        if bad.size:
            raise NormalizationError(f"constant score row for probe index {bad[0]}")
        return replace(m, scores=(s - mean) / std)
    if scheme == "minmax":
        lo = s.min(axis=1, keepdims=True)
        hi = s.max(axis=1, keepdims=True)
        bad = np.nonzero((hi - lo).ravel() == 0)[0]
        if bad.size:
            raise NormalizationError(f"constant score row for probe index {bad[0]}")
        return replace(m, scores=(s - lo) / (hi - lo))
    raise ValueError(f"unknown normalization scheme {scheme!r}")


def combine_scores(matrices, rule: str) -> ScoreMatrix:
    """Entrywise fixed-rule fusion across >= 2 same-shape systems.

    The product rule expects minmax-normalized higher-is-better inputs in
    [0, 1] and is evaluated as a sum of logarithms with entries floored at
    1e-12 to dodge underflow.
    """
    matrices = list(matrices)
    if len(matrices) < 2:
        raise ValueError(f"need >= 2 score matrices, got {len(matrices)}")
    _check_same_frame(matrices)
    stack = np.stack([m.scores for m in matrices])
    if rule == "product":
        if np.any(stack < 0.0) or np.any(stack > 1.0):
            raise ValueError(
                "product rule needs minmax-normalized scores in [0, 1]; "
                "normalize (and orient higher-is-better) first"
            )
        fused = np.exp(np.sum(np.log(np.maximum(stack, _PRODUCT_FLOOR)), axis=0))
    elif rule == "mean":
        fused = stack.mean(axis=0)
    elif rule == "median":
        fused = np.median(stack, axis=0)
    elif rule == "max":
        fused = stack.max(axis=0)
    elif rule == "min":
        fused = stack.min(axis=0)
    else:
        raise ValueError(f"unknown score rule {rule!r}")
    first = matrices[0]
    return ScoreMatrix(fused, first.polarity, first.class_ids, first.probe_ids)


def weighted_combine(vis: ScoreMatrix, th: ScoreMatrix, alpha: float) -> ScoreMatrix:
    """Trained convex rule: alpha * vis + (1 - alpha) * th, entrywise.

    alpha = 0 reproduces the thermal matrix exactly and alpha = 1 the
    visible one, so sweep endpoints coincide with the single systems.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    _check_same_frame([vis, th])
    return ScoreMatrix(alpha * vis.scores + (1.0 - alpha) * th.scores,
                       vis.polarity, vis.class_ids, vis.probe_ids)


def decide(m: ScoreMatrix) -> list:
    """Best class per probe under the matrix polarity; ties go to the
    lowest class id."""
    oriented = m.scores if m.polarity == HIGHER else -m.scores
    out = []
    for row in oriented:
        best = row.max()
        tied = [m.class_ids[j] for j in np.nonzero(row == best)[0]]
        out.append(min(tied))
    return out


def majority_vote(matrices) -> list:
    """Decision-level fusion: the modal per-system label per probe.

    Ties break toward the label the first system scores best among the
    tied labels.  (With only two systems every disagreement is a tie, so
    this degenerates to the first system's call.)
    """
    matrices = list(matrices)
    if not matrices:
        raise ValueError("need >= 1 score matrix")
    _check_same_frame(matrices)
    votes = [decide(m) for m in matrices]
    first = matrices[0]
    col = {cid: j for j, cid in enumerate(first.class_ids)}
    oriented = first.scores if first.polarity == HIGHER else -first.scores
    out = []
    for p in range(first.probes):
        ballot = [votes[s][p] for s in range(len(matrices))]
        counts = {}
        for label in ballot:
            counts[label] = counts.get(label, 0) + 1
        top = max(counts.values())
        tied = [label for label, c in counts.items() if c == top]
        if len(tied) == 1:
            out.append(tied[0])
        else:
            out.append(max(tied, key=lambda label: (oriented[p, col[label]], )))
    return out


def identification_rate(decisions, truth) -> float:
    """Percent of probes whose decided class matches the true class."""
    if len(decisions) != len(truth):
        raise ValueError("decisions and truth lengths differ")
    hits = sum(1 for d, t in zip(decisions, truth) if d == t)
    return 100.0 * hits / len(truth)


def alpha_sweep(vis: ScoreMatrix, th: ScoreMatrix, truth, grid) -> list[tuple[float, float]]:
    """Identification rate of the trained rule at each alpha in the grid."""
    truth = list(truth)
    if len(truth) != vis.probes:
        raise ValueError("truth length must equal the probe count")
    out = []
    for alpha in grid:
        fused = weighted_combine(vis, th, float(alpha))
        out.append((float(alpha), identification_rate(decide(fused), truth)))
    return out


def save_scores(m: ScoreMatrix, path) -> None:
    """Write (probe_id, class_id, score) rows, probe-major."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["probe_id", "class_id", "score"])
        for p, pid in enumerate(m.probe_ids):
            for c, cid in enumerate(m.class_ids):
                writer.writerow([pid, cid, format(m.scores[p, c], ".17g")])


def load_scores(path, polarity: str = LOWER) -> ScoreMatrix:
    """Read a (probe_id, class_id, score) CSV back into a matrix.

    Probe and class orderings follow first appearance in the file; every
    probe must cover the same classes.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:3] != ["probe_id", "class_id", "score"]:
        raise ValueError(f"{path}: expected header probe_id,class_id,score")
    probe_ids, class_ids, cells = [], [], {}
    for pid, cid, score in rows[1:]:
        if pid not in cells:
            cells[pid] = {}
            probe_ids.append(pid)
        if cid not in class_ids and len(probe_ids) == 1:
            class_ids.append(cid)
        cells[pid][cid] = float(score)
    scores = np.empty((len(probe_ids), len(class_ids)))
    for p, pid in enumerate(probe_ids):
        for c, cid in enumerate(class_ids):
            if cid not in cells[pid]:
                raise ValueError(f"{path}: probe {pid} is missing class {cid}")
            scores[p, c] = cells[pid][cid]
    return ScoreMatrix(scores, polarity, tuple(class_ids), tuple(probe_ids))
