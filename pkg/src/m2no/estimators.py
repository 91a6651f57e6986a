"""Scikit-learn style wrappers around the transforms and the operator.

These adapters let the multiwavelet transform act as a feature map and
the learnable operator train through the familiar ``fit``/``predict``
interface (with ``get_params``/``set_params`` and cloning support), while
the functional API underneath stays numpy-native.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.exceptions import NotFittedError

from .basis import derive_filter_bank
from .grids import Field
from .model import forward, init_params
from .training import TrainConfig, relative_l2, train
from .transforms import CoeffPyramid, Detail2D, decompose, reconstruct


class MultiwaveletTransform(TransformerMixin, BaseEstimator):
    """Bijective multiwavelet feature map for dyadic 1D or 2D samples.

    ``transform`` flattens each sample's coefficient pyramid into one
    vector (detail blocks finest first, base last); ``inverse_transform``
    is exact.  The transform is stateless apart from remembering the
    sample shape, so ``fit`` only validates.
    """

    def __init__(self, k: int = 4, levels: int = 1):
        self.k = k
        self.levels = levels

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        if X.ndim not in (2, 3):
            raise ValueError(
                f"X must be (n_samples, n) or (n_samples, ny, nx), got shape {X.shape}"
            )
        bank = derive_filter_bank(self.k)
        decompose(X[0], bank, self.levels)  # shape validation
        self.shape_ = X.shape[1:]
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def _check_fitted(self):
        if not hasattr(self, "shape_"):
            raise NotFittedError("MultiwaveletTransform is not fitted")

    def _flatten(self, pyr: CoeffPyramid) -> np.ndarray:
        parts = []
        for det in pyr.details:
            if pyr.dim == 1:
                parts.append(det.ravel())
            else:
                parts.extend([det.gh.ravel(), det.hg.ravel(), det.gg.ravel()])
        parts.append(pyr.base.ravel())
        return np.concatenate(parts)

    def transform(self, X) -> np.ndarray:
        self._check_fitted()
        X = np.asarray(X, dtype=float)
        bank = derive_filter_bank(self.k)
        return np.stack([self._flatten(decompose(x, bank, self.levels)) for x in X])

    def inverse_transform(self, Xt) -> np.ndarray:
        self._check_fitted()
        Xt = np.asarray(Xt, dtype=float)
        bank = derive_filter_bank(self.k)
        out = []
        for row in Xt:
            details = []
            shape = tuple(self.shape_)
            offset = 0
            for _ in range(self.levels):
                shape = tuple(s // 2 for s in shape)
                size = int(np.prod(shape))
                if len(self.shape_) == 1:
                    details.append(row[offset : offset + size].reshape(shape))
                    offset += size
                else:
                    gh = row[offset : offset + size].reshape(shape)
                    hg = row[offset + size : offset + 2 * size].reshape(shape)
                    gg = row[offset + 2 * size : offset + 3 * size].reshape(shape)
                    details.append(Detail2D(gh=gh, hg=hg, gg=gg))
                    offset += 3 * size
            base = row[offset:].reshape(shape)
            pyr = CoeffPyramid(k=self.k, dim=len(self.shape_), details=tuple(details), base=base)
            out.append(reconstruct(pyr, bank))
        return np.stack(out)


class M2NORegressor(RegressorMixin, BaseEstimator):
    """Operator-learning estimator mapping input fields to solution fields.

    ``X`` and ``y`` are arrays of shape (n_samples, n) or
    (n_samples, ny, nx) on dyadic grids.  Training uses Adam with the
    standard step decay; a trailing ``validation_fraction`` of the samples
    is held out for the per-epoch metric.
    """

    def __init__(
        self,
        k: int = 2,
        c: int = 4,
        depth: int = 3,
        layers: int = 4,
        steps=None,
        detail_maps: bool = False,
        lr: float = 1e-3,
        decay: float = 0.5,
        decay_every: int = 100,
        epochs: int = 200,
        batch_size: int = 32,
        validation_fraction: float = 0.2,
        target_valid: float | None = None,
        seed: int = 0,
    ):
        self.k = k
        self.c = c
        self.depth = depth
        self.layers = layers
        self.steps = steps
        self.detail_maps = detail_maps
        self.lr = lr
        self.decay = decay
        self.decay_every = decay_every
        self.epochs = epochs
        self.batch_size = batch_size
        self.validation_fraction = validation_fraction
        self.target_valid = target_valid
        self.seed = seed

    def _pairs(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if X.shape != y.shape:
            raise ValueError(f"X and y shapes differ: {X.shape} vs {y.shape}")
        spacing = tuple(1.0 / (s + 1) for s in X.shape[1:])
        return [
            (Field(a, spacing), Field(u, spacing)) for a, u in zip(X, y)
        ]

    def fit(self, X, y):
        pairs = self._pairs(X, y)
        dim = len(pairs[0][0].shape)
        n_valid = int(round(len(pairs) * self.validation_fraction))
        train_pairs = pairs[: len(pairs) - n_valid]
        valid_pairs = pairs[len(pairs) - n_valid :]
        self.params_ = init_params(
            k=self.k,
            c=self.c,
            depth=self.depth,
            layers=self.layers,
            dim=dim,
            steps=self.steps,
            use_detail_maps=self.detail_maps,
            seed=self.seed,
        )
        config = TrainConfig(
            lr=self.lr,
            decay=self.decay,
            decay_every=self.decay_every,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
            target_valid=self.target_valid,
        )
        _, self.history_ = train(self.params_, train_pairs, valid_pairs, config)
        self.shape_ = np.asarray(X).shape[1:]
        self.valid_rel_l2_ = self.history_.valid_rel_l2[-1] if valid_pairs else None
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "params_"):
            raise NotFittedError("M2NORegressor is not fitted")
        X = np.asarray(X, dtype=float)
        return np.stack([np.asarray(forward(self.params_, x)) for x in X])

    def validation_error(self, X, y) -> float:
        """Mean relative L2 error of predictions against targets."""
        if not hasattr(self, "params_"):
            raise NotFittedError("M2NORegressor is not fitted")
        return relative_l2(self.params_, self._pairs(X, y))
