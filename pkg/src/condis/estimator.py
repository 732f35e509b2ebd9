"""Scikit-learn style front end for the subspace encoder-classifier.

Wraps the functional training loop in the familiar fit/transform/predict
surface so the model composes with pipelines, grid search, and cloning.
Attribute labels come in as an (n, K) matrix in whatever binary coding the
caller uses (0/1, -1/+1); predictions are returned in the same coding.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import training
from .errors import LabelOutOfRange
from .training import LabeledBatch, SubspaceLayout, TrainConfig


class SubspaceEncoderClassifier(TransformerMixin, BaseEstimator):
    """Jointly trained encoder and per-attribute classification heads.

    The latent space is split into one contiguous subspace per attribute
    (one dimension each by default, or ``subspace_dims`` for wider blocks).
    ``objective`` selects what, beyond classification, the encoder is asked
    to do: nothing ("Base"), make subspaces marginally independent
    ("BaseMI"), or make them conditionally independent given each attribute
    ("BaseCMI").  Rows may carry partial labels: masked-out entries are
    excluded from the classification loss and from the conditional
    shuffling groups.

    Parameters follow the training configuration one to one; see
    :class:`condis.training.TrainConfig`.
    """

    def __init__(
        self,
        objective="Base",
        subspace_dims=None,
        n_classes=2,
        lr_encoder=1e-3,
        lr_classifiers=1e-3,
        lr_discriminator=1e-3,
        adversarial_weight=1.0,
        pack_size=1,
        inner_classifier_steps=1,
        epochs=50,
        batch_size=128,
        encoder_hidden=(),
        classifier_hidden=(),
        disc_hidden=(64, 64),
        random_state=0,
    ):
        self.objective = objective
        self.subspace_dims = subspace_dims
        self.n_classes = n_classes
        self.lr_encoder = lr_encoder
        self.lr_classifiers = lr_classifiers
        self.lr_discriminator = lr_discriminator
        self.adversarial_weight = adversarial_weight
        self.pack_size = pack_size
        self.inner_classifier_steps = inner_classifier_steps
        self.epochs = epochs
        self.batch_size = batch_size
        self.encoder_hidden = encoder_hidden
        self.classifier_hidden = classifier_hidden
        self.disc_hidden = disc_hidden
        self.random_state = random_state

    def _encode_labels(self, S, mask):
        """Map raw attribute values to class indices, one coding per column."""
        classes = []
        idx = np.zeros(S.shape, dtype=int)
        for k in range(S.shape[1]):
            col, m = S[:, k], mask[:, k]
            values = np.unique(col[m]) if m.any() else np.unique(col[:1])
            if len(values) > self.n_classes:
                raise LabelOutOfRange(
                    f"attribute {k} has {len(values)} distinct values, "
                    f"n_classes is {self.n_classes}"
                )
            pos = np.searchsorted(values, col)
            pos = np.clip(pos, 0, len(values) - 1)
            bad = m & (values[pos] != col)
            if bad.any():
                raise LabelOutOfRange(f"attribute {k} has labels outside its coding")
            idx[:, k] = np.where(m, pos, 0)
            classes.append(values)
        return classes, idx

    def fit(self, X, S, label_mask=None):
        X, S = check_X_y(X, S, multi_output=True, dtype=np.float64)
        S = np.asarray(S)
        if S.ndim == 1:
            S = S[:, None]
        if label_mask is None:
            mask = np.ones(S.shape, dtype=bool)
        else:
            mask = check_array(label_mask, dtype=bool, ensure_2d=True)
            if mask.shape != S.shape:
                raise ValueError(f"label_mask shape {mask.shape} != labels shape {S.shape}")
        k_attrs = S.shape[1]
        dims = tuple(self.subspace_dims) if self.subspace_dims else (1,) * k_attrs
        if len(dims) != k_attrs:
            raise ValueError(f"subspace_dims declares {len(dims)} blocks for {k_attrs} attributes")

        self.classes_, labels = self._encode_labels(S, mask)
        config = TrainConfig(
            objective=self.objective,
            layout=SubspaceLayout(dims),
            input_dim=X.shape[1],
            latent_dim=sum(dims),
            n_classes=self.n_classes,
            lr_encoder=self.lr_encoder,
            lr_classifiers=self.lr_classifiers,
            lr_discriminator=self.lr_discriminator,
            adversarial_weight=self.adversarial_weight,
            pack_size=self.pack_size,
            inner_classifier_steps=self.inner_classifier_steps,
            epochs=self.epochs,
            batch=min(self.batch_size, len(X)),
            seed=0 if self.random_state is None else int(self.random_state),
            encoder_hidden=tuple(self.encoder_hidden),
            classifier_hidden=tuple(self.classifier_hidden),
            disc_hidden=tuple(self.disc_hidden),
        )
        self.models_, self.log_ = training.train(LabeledBatch(X, labels, mask), config)
        self.config_ = config
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        """Latent codes, shape (n, sum(subspace_dims))."""
        check_is_fitted(self, "models_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return training.encode(self.models_, X)

    def predict(self, X):
        """Per-attribute labels in the coding seen at fit time, shape (n, K)."""
        check_is_fitted(self, "models_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        idx = training.predict(self.models_, X)
        cols = [self.classes_[k][np.clip(idx[:, k], 0, len(self.classes_[k]) - 1)]
                for k in range(idx.shape[1])]
        return np.stack(cols, axis=1)

    def score(self, X, S):
        """Mean per-attribute accuracy."""
        S = np.asarray(S)
        if S.ndim == 1:
            S = S[:, None]
        return float(np.mean(self.predict(X) == S))

    def predict_fn(self):
        """Class-index predictor callable for the evaluation ops."""
        check_is_fitted(self, "models_")
        return lambda x: training.predict(self.models_, np.asarray(x, dtype=np.float64))
