"""Dispersion-based matcher: feature selection and likelihood-ratio scoring.

Each feature component gets two variance estimates from the enrolled
gallery: the within-user dispersion (pooled over each user's samples) and
the between-user dispersion (over the per-user means).  Their ratio
within / (between + within) measures how little a component discriminates;
components whose ratio exceeds a threshold are discarded.

Matching treats the difference between two feature vectors as a draw from
one of two zero-mean Gaussians, "unequal persons" vs "equal person", and
scores it with the log-likelihood ratio

    g(x) = ln p(x | unequal) - ln p(x | equal) + ln(P(U) / P(E))

summed over the selected components (independence across components).
Large |x| drives g up, so for identification the lowest class score wins.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class GalleryError(ValueError):
    """Raised for a gallery violating the enrollment contract."""


class EmptySelectionError(ValueError):
    """Raised when the threshold keeps no component; raise the threshold."""


class SingularComponentError(ValueError):
    """Raised when a selected component has (near) zero within-user
    variance, making the equal-hypothesis density singular."""


_VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class Gallery:
    """Enrolled templates: one feature matrix (samples x D) per user."""

    user_ids: tuple
    templates: tuple  # of np.ndarray, aligned with user_ids

    def __post_init__(self):
        if len(self.user_ids) != len(self.templates):
            raise GalleryError("user_ids and templates lengths differ")
        if len(self.user_ids) < 2:
            raise GalleryError(f"need >= 2 users, got {len(self.user_ids)}")
        if len(set(self.user_ids)) != len(self.user_ids):
            raise GalleryError("duplicate user ids")
        mats = []
        dim = None
        for uid, t in zip(self.user_ids, self.templates):
            m = np.atleast_2d(np.asarray(t, dtype=np.float64))
            if m.shape[0] < 2:
                raise GalleryError(f"user {uid!r} has {m.shape[0]} templates, need >= 2")
            if dim is None:
                dim = m.shape[1]
            elif m.shape[1] != dim:
                raise GalleryError(
                    f"user {uid!r} feature length {m.shape[1]} != {dim}"
                )
            if not np.all(np.isfinite(m)):
                raise GalleryError(f"user {uid!r} has non-finite features")
            m.flags.writeable = False
            mats.append(m)
        object.__setattr__(self, "templates", tuple(mats))
        object.__setattr__(self, "user_ids", tuple(self.user_ids))

    @classmethod
    def from_dict(cls, users: dict) -> "Gallery":
        ids = sorted(users)
        return cls(tuple(ids), tuple(users[u] for u in ids))

    @property
    def feature_length(self) -> int:
        return self.templates[0].shape[1]


@dataclass(frozen=True)
class BdmModel:
    """Trained dispersions, the kept component indices, and score settings.

    `double_within_variance` picks the unequal-pair variance form: True
    doubles both dispersions (the variance of a difference of two
    independent samples), False doubles only the between-user term.
    """

    sigma_i_sq: np.ndarray
    sigma_p_sq: np.ndarray
    ratios: np.ndarray
    selected: np.ndarray
    sigma_threshold: float
    log_prior_ratio: float = 0.0
    double_within_variance: bool = True

    def __post_init__(self):
        for name in ("sigma_i_sq", "sigma_p_sq", "ratios"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        sel = np.asarray(self.selected, dtype=np.int64)
        sel.flags.writeable = False
        object.__setattr__(self, "selected", sel)

    @property
    def feature_length(self) -> int:
        return self.sigma_i_sq.shape[0]

    def pair_variances(self) -> tuple[np.ndarray, np.ndarray]:
        """(unequal, equal) difference variances on the selected components."""
        si = self.sigma_i_sq[self.selected]
        sp = self.sigma_p_sq[self.selected]
        v_equal = 2.0 * si
        if self.double_within_variance:
            v_unequal = 2.0 * (sp + si)
        else:
            v_unequal = 2.0 * sp + si
        return v_unequal, v_equal


def estimate_dispersions(gallery: Gallery) -> tuple[np.ndarray, np.ndarray]:
    """Per-component (within-user, between-user) variances.

    Within-user is the unbiased sample variance pooled across users;
    between-user is the unbiased variance of the per-user means.
    """
    means = np.stack([t.mean(axis=0) for t in gallery.templates])
    ss_within = np.zeros(gallery.feature_length)
    dof = 0
    for t, m in zip(gallery.templates, means):
        ss_within += ((t - m) ** 2).sum(axis=0)
        dof += t.shape[0] - 1
    sigma_i_sq = ss_within / dof
    sigma_p_sq = means.var(axis=0, ddof=1)
    return sigma_i_sq, sigma_p_sq


def dispersion_ratios(sigma_i_sq: np.ndarray, sigma_p_sq: np.ndarray) -> np.ndarray:
    """within / (between + within) per component; 1.0 where both are zero
    (forcing those uninformative components out of every selection)."""
    total = sigma_i_sq + sigma_p_sq
    return np.divide(sigma_i_sq, total, out=np.ones_like(total), where=total > 0)


def select_components(model: BdmModel, sigma_threshold: float) -> np.ndarray:
    """Indices with ratio <= threshold, ascending; zero-variance ones drop."""
    if not 0.0 <= sigma_threshold <= 1.0:
        raise ValueError(f"sigma threshold must be in [0, 1], got {sigma_threshold}")
    total = model.sigma_i_sq + model.sigma_p_sq
    keep = (model.ratios <= sigma_threshold) & (total > 0)
    selected = np.nonzero(keep)[0]
    if selected.size == 0:
        raise EmptySelectionError(
            f"no component has ratio <= {sigma_threshold}; raise the threshold"
        )
    return selected


def train_bdm(gallery: Gallery, sigma_threshold: float,
              log_prior_ratio: float = 0.0,
              double_within_variance: bool = True) -> BdmModel:
    """Estimate dispersions, compute ratios, and keep the best components."""
    sigma_i_sq, sigma_p_sq = estimate_dispersions(gallery)
    ratios = dispersion_ratios(sigma_i_sq, sigma_p_sq)
    stub = BdmModel(sigma_i_sq, sigma_p_sq, ratios, np.array([], dtype=np.int64),
                    sigma_threshold, log_prior_ratio, double_within_variance)
    selected = select_components(stub, sigma_threshold)
    return BdmModel(sigma_i_sq, sigma_p_sq, ratios, selected,
                    sigma_threshold, log_prior_ratio, double_within_variance)


def g_score(diff: np.ndarray, model: BdmModel) -> float:
    """Log-likelihood ratio of "different persons" over "same person".

    Positive g favors different persons.  The selected components must all
    have strictly positive within-user variance.
    """
    x = np.asarray(diff, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.feature_length:
        raise ValueError(
            f"diff must be a length-{model.feature_length} vector, got shape {x.shape}"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("diff has non-finite entries")
    if model.selected.size == 0:
        raise EmptySelectionError("model has no selected components")
    si = model.sigma_i_sq[model.selected]
    if np.any(si <= _VARIANCE_FLOOR):
        bad = model.selected[si <= _VARIANCE_FLOOR]
        raise SingularComponentError(
            f"within-user variance ~ 0 on selected components {bad.tolist()}; "
            "tighten the selection threshold"
        )
    v_unequal, v_equal = model.pair_variances()
    xs = x[model.selected]
    log_n_unequal = -0.5 * (np.log(2.0 * np.pi * v_unequal) + xs**2 / v_unequal)
    log_n_equal = -0.5 * (np.log(2.0 * np.pi * v_equal) + xs**2 / v_equal)
    return float(np.sum(log_n_unequal - log_n_equal)) + model.log_prior_ratio


def identify(probe: np.ndarray, gallery: Gallery, model: BdmModel,
             aggregate: str = "mean") -> tuple[object, np.ndarray]:
    """Rank gallery users by how little "different person" evidence the
    probe carries against their templates.

    The class score is the mean (or min) of g over the user's templates;
    the winner is the argmin, ties going to the lowest user id.  Returns
    (identified user id, per-class scores aligned with gallery.user_ids).
    """
    probe = np.asarray(probe, dtype=np.float64)
    scores = np.empty(len(gallery.user_ids))
    for i, templates in enumerate(gallery.templates):
        per_template = [g_score(probe - t, model) for t in templates]
        scores[i] = min(per_template) if aggregate == "min" else float(np.mean(per_template))
    order = sorted(range(len(scores)), key=lambda i: (scores[i], gallery.user_ids[i]))
    return gallery.user_ids[order[0]], scores


def save_model(model: BdmModel, path) -> None:
    doc = {
        "sigma_threshold": model.sigma_threshold,
        "selected": model.selected.tolist(),
        "sigma_i_sq": model.sigma_i_sq.tolist(),
        "sigma_p_sq": model.sigma_p_sq.tolist(),
        "log_prior_ratio": model.log_prior_ratio,
        "feature_length": model.feature_length,
        "double_within_variance": model.double_within_variance,
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_model(path) -> BdmModel:
    doc = json.loads(Path(path).read_text())
    sigma_i_sq = np.asarray(doc["sigma_i_sq"], dtype=np.float64)
    sigma_p_sq = np.asarray(doc["sigma_p_sq"], dtype=np.float64)
    return BdmModel(
        sigma_i_sq=sigma_i_sq,
        sigma_p_sq=sigma_p_sq,
        ratios=dispersion_ratios(sigma_i_sq, sigma_p_sq),
        selected=np.asarray(doc["selected"], dtype=np.int64),
        sigma_threshold=float(doc["sigma_threshold"]),
        log_prior_ratio=float(doc.get("log_prior_ratio", 0.0)),
        double_within_variance=bool(doc.get("double_within_variance", True)),
    )
