"""Estimator wrapper for EPLS-trained networks and the shared JSON model envelope."""

import json
from dataclasses import asdict

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_feature_map
from .baselines import OMP1, PCA, KernelPCA
from .classify import LinearSVM
from .errors import ConfigError, DataError
from .imageio import atomic_write
from .network import ArchitectureSpec, FilterBank, LayerSpec, extract_features
from .trainer import TrainSchedule, pretrain_network

FORMAT_VERSION = 1
SPEC_VERSION = "1.0"


def _as_images(X):
    if isinstance(X, np.ndarray) and X.ndim in (2, 3):
        return [check_feature_map(X)]
    return [check_feature_map(x) for x in X]


class EPLSNetwork(BaseEstimator, TransformerMixin):
    """Convolutional feature extractor trained layer by layer with EPLS.

    ``fit`` takes one image (rows, cols, bands) or a list of images.
    ``transform`` returns per-pixel features (``mode="pixel"``, an array of
    shape (rows, cols, F) per image) or one quadrant-pooled vector per image
    (``mode="scene"``, an (n_images, F) matrix).
    """

    def __init__(self, layers=None, schedule=None, mode="pixel", normalize_input=True,
                 normalize_eps=1e-2, random_state=0):
        self.layers = layers
        self.schedule = schedule
        self.mode = mode
        self.normalize_input = normalize_input
        self.normalize_eps = normalize_eps
        self.random_state = random_state

    def _schedules(self, n_layers):
        sched = self.schedule if self.schedule is not None else {}
        if isinstance(sched, (TrainSchedule, dict)):
            sched = [sched] * n_layers
        out = []
        for i, s in enumerate(sched):
            s = s if isinstance(s, TrainSchedule) else TrainSchedule(**s)
            out.append(TrainSchedule(**{**asdict(s), "seed": s.seed + self.random_state * 1009 + i}))
        return out

    def fit(self, X, y=None):
        images = _as_images(X)
        layers = self.layers if self.layers is not None else [LayerSpec(32, 5)]
        self.arch_ = ArchitectureSpec(images[0].shape[2], [
            l if isinstance(l, LayerSpec) else LayerSpec(**l) for l in layers],
            self.normalize_input, self.normalize_eps)
        self.filters_, self.reports_ = pretrain_network(
            images, self.arch_, self._schedules(len(self.arch_.layers)), return_reports=True)
        return self

    def transform(self, X):
        check_is_fitted(self, "filters_")
        single = isinstance(X, np.ndarray) and X.ndim in (2, 3)
        feats = [extract_features(im, self.arch_, self.filters_, self.mode) for im in _as_images(X)]
        if self.mode == "scene":
            return np.vstack(feats)
        return feats[0] if single else feats

    @property
    def n_features_out_(self):
        return self.arch_.layers[-1].out_channels * (4 if self.mode == "scene" else 1)


# ---------------------------------------------------------------------------
# JSON envelope


def _network_payload(net):
    return {
        "arch": net.arch_.to_dict(),
        "mode": net.mode,
        "filters": [{"W": f.W.tolist(), "b": f.b.tolist(), "receptive_field": f.receptive_field}
                    for f in net.filters_],
    }


def _network_from(payload):
    arch = ArchitectureSpec(**payload["arch"])
    net = EPLSNetwork(layers=arch.layers, mode=payload.get("mode", "pixel"),
                      normalize_input=arch.normalize_input, normalize_eps=arch.normalize_eps)
    net.arch_ = arch
    net.filters_ = [FilterBank(np.array(f["W"], dtype=np.float64), np.array(f["b"], dtype=np.float64),
                               f.get("receptive_field", l.receptive_field))
                    for f, l in zip(payload["filters"], arch.layers)]
    if len(net.filters_) != len(arch.layers):
        raise DataError("model lists a different number of filter banks and layers")
    for f, l in zip(net.filters_, arch.layers):
        if f.n_outputs != l.n_outputs:
            raise DataError("filter bank size disagrees with its layer spec")
    return net


_ARRAYS = {
    "pca": ("mean_", "components_", "eigenvalues_"),
    "kpca": ("X_fit_", "alphas_", "eigenvalues_", "_col_means"),
    "omp1": ("components_",),
    "svm": ("coef_", "intercept_", "mean_", "scale_", "classes_"),
}
_SCALARS = {
    "pca": ("n_features_in_",),
    "kpca": ("lengthscale_", "_grand_mean", "n_features_in_"),
    "omp1": ("n_features_in_", "dead_fraction_", "dead_counts_", "errors_"),
    "svm": ("n_features_in_",),
}
_CLASSES = {"pca": PCA, "kpca": KernelPCA, "omp1": OMP1, "svm": LinearSVM}


def model_to_dict(model):
    if isinstance(model, EPLSNetwork):
        kind, body = "epls", _network_payload(model)
    else:
        kind = next((k for k, c in _CLASSES.items() if isinstance(model, c)), None)
        if kind is None:
            raise ConfigError(f"cannot serialize {type(model).__name__}")
        body = {"params": model.get_params()}
        for name in _ARRAYS[kind]:
            body[name] = np.asarray(getattr(model, name)).tolist()
        for name in _SCALARS[kind]:
            value = getattr(model, name)
            body[name] = value.item() if isinstance(value, np.generic) else value
    return {"version": FORMAT_VERSION, "spec_version": SPEC_VERSION, "kind": kind, **body}


def model_from_dict(doc):
    kind = doc.get("kind")
    if doc.get("version") != FORMAT_VERSION:
        raise DataError(f"unsupported model version {doc.get('version')!r}")
    if kind == "epls":
        return _network_from(doc)
    if kind not in _CLASSES:
        raise DataError(f"unknown model kind {kind!r}")
    model = _CLASSES[kind](**doc["params"])
    for name in _ARRAYS[kind]:
        dtype = np.int64 if name == "classes_" else np.float64
        setattr(model, name, np.array(doc[name], dtype=dtype))
    for name in _SCALARS[kind]:
        setattr(model, name, doc[name])
    return model


def dumps(obj):
    return json.dumps(obj, indent=1, allow_nan=False) + "\n"


def save_model(model, path):
    # json writes floats with repr(), the shortest string that round-trips exactly
    atomic_write(path, dumps(model_to_dict(model)).encode("utf-8"))


def load_model(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not a JSON model file ({exc})") from exc
    return model_from_dict(doc)
