"""Shilling detectors: PCA-based user selection (unsupervised) and popularity-degree features (supervised)."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from sklearn.linear_model import LogisticRegression
from sklearn.model_selection import StratifiedKFold
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from .dataset import RatingsDataset

FEATURES = ("mean_popularity", "popularity_var", "frac_bottom_decile", "frac_top_decile", "rating_count", "mean_rating")


@dataclass
class DetectionReport:
    flagged: set[str]
    scores: dict[str, float]
    precision: float | None = None
    recall: float | None = None
    real_precision: float | None = None
    real_recall: float | None = None
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "config": self.config,
            "flagged": sorted(self.flagged),
            "precision": self.precision,
            "recall": self.recall,
            "real_precision": self.real_precision,
            "real_recall": self.real_recall,
            "scores": {u: self.scores[u] for u in sorted(self.scores)},
        }
        return json.dumps(doc, indent=2, sort_keys=True)


def score_detection(flagged, truth) -> tuple[float, float]:
    """Precision and recall of ``flagged`` against ``truth``.

    Nothing flagged gives precision 0; an empty truth set gives recall 1.
    """
    flagged, truth = set(flagged), set(truth)
    tp = len(flagged & truth)
    fp = len(flagged - truth)
    fn = len(truth - flagged)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    return precision, recall


def _attach_scores(report: DetectionReport, users, truth):
    truth = set(truth)
    report.precision, report.recall = score_detection(report.flagged, truth)
    real = set(users) - truth
    report.real_precision, report.real_recall = score_detection(set(users) - report.flagged, real)
    return report


# ---------------------------------------------------------------- PCA


def standardized_matrix(data: RatingsDataset) -> sp.csr_matrix:
    """User x item matrix with each item's ratings z-scored over its raters; unrated stays 0."""
    mean = np.nan_to_num(data.per_item_mean)
    std = np.sqrt(np.nan_to_num(data.per_item_var))
    std = np.where(std > 0, std, 1.0)
    z = (data.r - mean[data.i]) / std[data.i]
    return sp.csr_matrix((z, (data.u, data.i)), shape=(data.n_users, data.n_items))


def pca_user_scores(data: RatingsDataset, n_components: int = 3) -> np.ndarray:
    """Sum of squared user loadings on the leading principal directions of the user covariance."""
    Z = standardized_matrix(data)
    # users are the variables, items the observations
    Zd = Z.toarray()
    Zd -= Zd.mean(axis=1, keepdims=True)
    C = (Zd @ Zd.T) / max(data.n_items - 1, 1)
    w, v = np.linalg.eigh(C)
    top = v[:, np.argsort(w)[::-1][:n_components]]
    return (top**2).sum(axis=1)


def detect_pca(poisoned: RatingsDataset, m: int, n_components: int = 3, truth=None) -> DetectionReport:
    """Flag the ``m`` users contributing least to the leading principal components."""
    if m < 0:
        raise ValueError("m must be >= 0")
    if poisoned.n_users < 2:
        raise ValueError("PCA detection needs at least two users")
    if m > poisoned.n_users:
        raise ValueError(f"m={m} exceeds the number of users ({poisoned.n_users})")
    scores = pca_user_scores(poisoned, n_components)
    order = np.lexsort((np.arange(scores.size), scores))
    flagged = {poisoned.users[u] for u in order[:m]}
    report = DetectionReport(
        flagged,
        {poisoned.users[u]: float(s) for u, s in enumerate(scores)},
        config={"detector": "pca", "m": m, "n_components": n_components},
    )
    if truth is not None:
        _attach_scores(report, poisoned.users, truth)
    return report


# ---------------------------------------------------------------- degree features


def _popularity_stats(data: RatingsDataset):
    pop = data.per_item_count.astype(np.float64)
    rated = pop[pop > 0]
    lo = np.quantile(rated, 0.1) if rated.size else 0.0
    hi = np.quantile(rated, 0.9) if rated.size else 0.0
    return pop, lo, hi


def degreesad_feature_matrix(poisoned: RatingsDataset) -> np.ndarray:
    """One row of features (see ``FEATURES``) per user; users without ratings get zeros."""
    pop, lo, hi = _popularity_stats(poisoned)
    u = poisoned.u
    p = pop[poisoned.i]
    n = np.bincount(u, minlength=poisoned.n_users).astype(np.float64)
    safe = np.where(n > 0, n, 1.0)
    mean_pop = np.bincount(u, weights=p, minlength=poisoned.n_users) / safe
    var_pop = np.bincount(u, weights=p * p, minlength=poisoned.n_users) / safe - mean_pop**2
    bottom = np.bincount(u, weights=(p <= lo).astype(float), minlength=poisoned.n_users) / safe
    top = np.bincount(u, weights=(p >= hi).astype(float), minlength=poisoned.n_users) / safe
    mean_r = np.bincount(u, weights=poisoned.r.astype(float), minlength=poisoned.n_users) / safe
    return np.column_stack([mean_pop, np.maximum(var_pop, 0.0), bottom, top, n, mean_r])


def degreesad_features(poisoned: RatingsDataset, user) -> dict[str, float]:
    """Popularity-degree features of one user (id or index)."""
    u = poisoned.user_index[user] if isinstance(user, str) else int(user)
    pop, lo, hi = _popularity_stats(poisoned)
    items = poisoned.user_items(u)
    if items.size == 0:
        return dict.fromkeys(FEATURES, 0.0)
    p = pop[items]
    return {
        "mean_popularity": float(p.mean()),
        "popularity_var": float(p.var()),
        "frac_bottom_decile": float((p <= lo).mean()),
        "frac_top_decile": float((p >= hi).mean()),
        "rating_count": float(items.size),
        "mean_rating": float(poisoned.user_ratings(u).mean()),
    }


def detect_degreesad(poisoned: RatingsDataset, fake_truth, folds: int = 5, seed: int = 0) -> DetectionReport:
    """Logistic classifier on degree features, scored by stratified ``folds``-fold out-of-fold predictions."""
    if folds < 2:
        raise ValueError("folds must be >= 2")
    truth = set(fake_truth)
    y = np.array([u in truth for u in poisoned.users], dtype=int)
    if y.min() == y.max():
        raise ValueError("labels contain a single class")
    if np.bincount(y).min() < folds:
        raise ValueError(f"each class needs at least {folds} users for {folds}-fold validation")
    X = degreesad_feature_matrix(poisoned)
    proba = np.zeros(len(y))
    skf = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    for tr, te in skf.split(X, y):
        clf = make_pipeline(StandardScaler(), LogisticRegression(max_iter=1000))
        clf.fit(X[tr], y[tr])
        proba[te] = clf.predict_proba(X[te])[:, 1]
    flagged = {poisoned.users[k] for k in np.flatnonzero(proba >= 0.5)}
    report = DetectionReport(
        flagged,
        {poisoned.users[k]: float(p) for k, p in enumerate(proba)},
        config={"detector": "degreesad", "folds": folds, "seed": seed},
    )
    return _attach_scores(report, poisoned.users, truth)
