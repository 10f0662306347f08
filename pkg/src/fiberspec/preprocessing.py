"""scikit-learn transformers wrapping the spectra-core operations.

These operate on 2-D arrays of already block-averaged spectra (one per row)
so they can sit in front of the estimators in :mod:`fiberspec.models` inside
a :class:`sklearn.pipeline.Pipeline`.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import spectra


class SNV(TransformerMixin, BaseEstimator):
    """Row-wise standard normal variate. Stateless."""

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = check_array(X, dtype=np.float64)
        return spectra.snv(X)


class SavitzkyGolay(TransformerMixin, BaseEstimator):
    """Length-preserving Savitzky-Golay smoothing/differentiation per row."""

    def __init__(self, window=9, polyorder=2, deriv=1):
        self.window = window
        self.polyorder = polyorder
        self.deriv = deriv

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        spectra.savgol_coefficients(self.window, self.polyorder, self.deriv)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = check_array(X, dtype=np.float64)
        return spectra.savgol_filter(X, self.window, self.polyorder, self.deriv)


class SpectralPreprocessor(TransformerMixin, BaseEstimator):
    """SNV followed by a Savitzky-Golay derivative.

    Spatial block averaging happens before data reaches this transformer
    (see :func:`fiberspec.spectra.pipeline_apply`). Dark rows are not
    dropped here; use :meth:`keep_mask` to screen reflectance input first.
    """

    def __init__(self, apply_snv=True, sg_window=9, sg_polyorder=2, sg_deriv=1,
                 dark_threshold=0.05):
        self.apply_snv = apply_snv
        self.sg_window = sg_window
        self.sg_polyorder = sg_polyorder
        self.sg_deriv = sg_deriv
        self.dark_threshold = dark_threshold

    def _config(self):
        return spectra.PipelineConfig(
            apply_snv=self.apply_snv, smooth_block=1, sg_window=self.sg_window,
            sg_polyorder=self.sg_polyorder, sg_deriv=self.sg_deriv,
            dark_threshold=self.dark_threshold,
        )

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.config_ = self._config()
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        X = check_array(X, dtype=np.float64)
        if self.apply_snv:
            X = spectra.snv(X)
        return spectra.savgol_apply(X, self.config_)

    def keep_mask(self, X):
        X = check_array(X, dtype=np.float64)
        return spectra.dark_mask(X, self.dark_threshold)
