"""scikit-learn style estimators over the training and compression layers."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin, clone
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted, validate_data

from . import mltrain
from .bitcodec import encode_tabular, infer_schema, raw_size_bits
from .exceptions import NonBinaryLabels
from .gede import SearchConfig, compress, find_beta_for_count, find_beta_for_fraction


def _sample_weight(sample_weight, n):
    if sample_weight is None:
        return None
    w = np.asarray(sample_weight, dtype=np.float64)
    if w.shape != (n,):
        raise ValueError(f"sample_weight must have shape ({n},), got {w.shape}")
    if np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
        raise ValueError("sample_weight must be finite, non-negative and not all zero")
    return w


class _GDBase(BaseEstimator):
    def _config(self) -> mltrain.TrainConfig:
        return mltrain.TrainConfig(learning_rate=self.learning_rate, max_iters=self.max_iter, tol=self.tol,
                                   intercept=self.fit_intercept, standardize=self.standardize,
                                   record_every=self.record_every)

    def _store(self, params: mltrain.ModelParams, report=None):
        self.params_ = params
        self.report_ = report
        self.n_iter_ = report.iters_run if report is not None else 0
        theta = params.theta
        coef = theta[1:] if params.intercept else theta
        intercept = theta[0] if params.intercept else 0.0
        if params.mean is not None:  # express in the original feature units
            coef = coef / params.scale
            intercept = intercept - float(coef @ params.mean)
        self.coef_ = np.asarray(coef, dtype=np.float64)
        self.intercept_ = float(intercept)

    def _decision(self, X):
        check_is_fitted(self, "params_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return self.params_.decision_function(X)


class LinearGDRegressor(RegressorMixin, _GDBase):
    """Least squares by batch gradient descent or by the normal equations.

    ``sample_weight`` turns both solvers into their weighted forms; with
    integer weights this is exactly training on the rows repeated that
    many times, which is how condensed samples are used.
    """

    def __init__(self, solver="gd", learning_rate=0.001, max_iter=None, tol=1e-8, fit_intercept=True,
                 standardize=False, record_every=100):
        self.solver = solver
        self.learning_rate = learning_rate
        self.max_iter = max_iter
        self.tol = tol
        self.fit_intercept = fit_intercept
        self.standardize = standardize
        self.record_every = record_every

    def fit(self, X, y, sample_weight=None):
        X, y = validate_data(self, X, y, dtype=np.float64, y_numeric=True)
        w = _sample_weight(sample_weight, len(y))
        if self.solver == "gd":
            report = mltrain.train(X, y, self._config(), weights=w)
            self._store(report.params, report)
        elif self.solver == "closed_form":
            Xd = mltrain.add_intercept(X) if self.fit_intercept else X
            theta = (mltrain.closed_form_full(Xd, y) if w is None
                     else mltrain.closed_form_weighted(Xd, y, w))
            self._store(mltrain.ModelParams(theta, "linear", self.fit_intercept))
            self.n_iter_ = 1
        else:
            raise ValueError("solver must be 'gd' or 'closed_form'")
        return self

    def predict(self, X):
        return self._decision(X)


class LogisticGDClassifier(ClassifierMixin, _GDBase):
    """Binary logistic regression by batch gradient descent.

    Targets are two class labels. When ``sample_weight`` is given, targets
    may instead be soft labels in ``[0, 1]`` (cluster averages of 0/1
    labels); ``classes_`` is then ``[0, 1]``.
    """

    def __init__(self, learning_rate=0.001, max_iter=None, tol=1e-8, fit_intercept=True, standardize=False,
                 record_every=100):
        self.learning_rate = learning_rate
        self.max_iter = max_iter
        self.tol = tol
        self.fit_intercept = fit_intercept
        self.standardize = standardize
        self.record_every = record_every

    def _targets(self, y, weighted):
        classes = np.unique(y)
        if weighted and np.issubdtype(classes.dtype, np.floating) and np.all((classes >= 0) & (classes <= 1)) \
                and not np.all(np.isin(classes, (0.0, 1.0))):
            self.classes_ = np.array([0, 1])
            return y.astype(np.float64)
        check_classification_targets(y)
        if len(classes) > 2:
            raise NonBinaryLabels(f"Only binary classification is supported; got {len(classes)} classes")
        if len(classes) == 1:  # a single observed class still fits (towards one extreme)
            classes = np.array([0, 1]) if classes[0] in (0, 1) else np.array([classes[0], classes[0]])
        self.classes_ = classes
        return (y == classes[1]).astype(np.float64)

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.classifier_tags.multi_class = False
        return tags

    def fit(self, X, y, sample_weight=None):
        X, y = validate_data(self, X, y, dtype=np.float64)
        w = _sample_weight(sample_weight, len(y))
        y01 = self._targets(y, w is not None)
        report = mltrain.train_logistic(X, y01, self._config(), weights=w)
        self._store(report.params, report)
        return self

    def decision_function(self, X):
        return self._decision(X)

    def predict_proba(self, X):
        p = mltrain.sigmoid(self._decision(X))
        return np.column_stack([1 - p, p])

    def predict(self, X):
        z = self._decision(X)
        return self.classes_[(z >= 0).astype(int)]


class EntropyCondenser(BaseEstimator):
    """Compress ``(X, y)`` and expose the weighted condensed samples.

    The number of clusters is set by ``beta`` directly, or searched for
    from ``target_count`` (closest ``m``) or ``target_fraction`` (first
    ``m >= fraction * n``), in that order of precedence.

    With ``decimals=True`` columns whose values are exact short decimals
    are stored as fixed-point integers; this changes bit statistics, and
    therefore clusters and storage, but never the decoded values.
    ``cluster_order``/``cluster_rounds``/``base_order`` select the
    ablation variants of the bit orders. ``stratify=True`` adds the target's bits to the cluster key, so each
    cluster holds one label (useful for classification).
    """

    def __init__(self, beta=8, target_count=None, target_fraction=None, tau=16, decimals=True, stratify=False,
                 cluster_order="high", cluster_rounds=True, base_order="increasing"):
        self.beta = beta
        self.target_count = target_count
        self.target_fraction = target_fraction
        self.tau = tau
        self.decimals = decimals
        self.stratify = stratify
        self.cluster_order = cluster_order
        self.cluster_rounds = cluster_rounds
        self.base_order = base_order

    def _columns(self, X, y):
        cols = {f"x{j}": X[:, j] for j in range(X.shape[1])}
        cols["y"] = y
        return cols

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64, y_numeric=True)
        schema = infer_schema(self._columns(X, y), decimals=self.decimals)
        bm = encode_tabular(self._columns(X, y), schema)
        exclude = () if self.stratify else ("y",)
        if self.target_count is not None:
            beta = find_beta_for_count(bm, int(self.target_count), exclude=exclude)
        elif self.target_fraction is not None:
            beta = find_beta_for_fraction(bm, float(self.target_fraction), exclude=exclude)
        else:
            beta = int(self.beta)
        cd = compress(bm, SearchConfig(beta=beta, tau=self.tau, condensed_mode="stored"),
                      target=None if self.stratify else "y", base_order=self.base_order,
                      cluster_order=self.cluster_order, cluster_rounds=self.cluster_rounds)
        Xc, yc, w = cd.get_condensed().xy("y")
        self.compressed_ = cd
        self.beta_ = beta
        self.m_ = cd.m
        self.condensed_X_, self.condensed_y_, self.sample_weight_ = Xc, yc, w
        self.size_bits_ = cd.best_size
        self.storage_ratio_ = cd.best_size / raw_size_bits(cd.n, schema)
        return self

    def fit_resample(self, X, y):
        """Return ``(X_condensed, y_condensed)``; the weights are in ``sample_weight_``."""
        self.fit(X, y)
        return self.condensed_X_, self.condensed_y_


class CondensedEstimator(BaseEstimator):
    """Fit ``estimator`` on the weighted condensed samples of ``condenser``."""

    def __init__(self, estimator=None, condenser=None):
        self.estimator = estimator
        self.condenser = condenser

    def fit(self, X, y):
        self.condenser_ = clone(self.condenser) if self.condenser is not None else EntropyCondenser()
        Xc, yc = self.condenser_.fit_resample(X, y)
        self.estimator_ = clone(self.estimator) if self.estimator is not None else LinearGDRegressor()
        self.estimator_.fit(Xc, yc, sample_weight=self.condenser_.sample_weight_)
        self.n_features_in_ = self.condenser_.n_features_in_
        return self

    def predict(self, X):
        check_is_fitted(self, "estimator_")
        return self.estimator_.predict(X)

    def score(self, X, y):
        check_is_fitted(self, "estimator_")
        return self.estimator_.score(X, y)
