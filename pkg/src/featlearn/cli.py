"""``featlearn`` command line: synth, train, classify, baseline, rank, render.

Every subcommand reads a JSON config (``--config``).  Relative input paths are
resolved against the config file's directory, relative output paths against
``--out`` (default: the config directory).  Failures exit non-zero with a JSON
error object on stderr: 2 config error, 3 data error, 4 numeric failure.
"""

import argparse
import json
import logging
import os
import sys
from typing import List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .baselines import OMP1, PCA, KernelPCA, dead_output_fraction
from .classify import DEFAULT_C_GRID, LinearSVM, NearestNeighbor, cv_select_C
from .errors import ConfigError, DataError, FeatlearnError, NumericError
from .imageio import (ClassSpec, SynthSpec, atomic_write, default_acceptance_spec, read_labels,
                      read_raster, render_feature, render_map, synth_dataset, texture_task_spec,
                      write_labels, write_raster)
from .metrics import evaluation_report, rank_features
from .model import SPEC_VERSION, EPLSNetwork, dumps, load_model, save_model
from .network import ArchitectureSpec, LayerSpec
from .trainer import TrainSchedule

logger = logging.getLogger("featlearn")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SynthClassConfig(_Strict):
    kind: Literal["spectral", "texture"] = "spectral"
    signatures: List[int] = [0]
    pattern: Literal["hstripes", "vstripes", "checker"] = "hstripes"
    period: int = 2


class SynthConfig(_Strict):
    rows: int = 128
    cols: int = 128
    channels: int = 8
    noise: float = 0.1
    grid: List[int] = [2, 2]
    classes: List[SynthClassConfig]
    layout: Optional[List[int]] = None

    def to_spec(self):
        d = self.model_dump()
        d["classes"] = [ClassSpec(**{**c, "signatures": tuple(c["signatures"])}) for c in d["classes"]]
        d["grid"] = tuple(d["grid"])
        return SynthSpec(**d)


class DatasetConfig(_Strict):
    image: Optional[str] = None
    labels: Optional[str] = None
    synth: Optional[SynthConfig] = None
    preset: Optional[Literal["acceptance", "texture"]] = None
    seed: Optional[int] = None

    @model_validator(mode="after")
    def _one_source(self):
        sources = sum(x is not None for x in (self.image, self.synth, self.preset))
        if sources != 1:
            raise ValueError("dataset needs exactly one of 'image', 'synth' or 'preset'")
        return self


class LayerConfig(_Strict):
    n_outputs: int = Field(32, ge=1)
    receptive_field: int = Field(5, ge=1)
    stride: int = Field(1, ge=1)
    nonlinearity: Literal["logistic", "identity", "rectifier"] = "logistic"
    encoder: Optional[Literal["logistic", "identity", "rectifier"]] = None
    pooling: int = Field(0, ge=0)
    polarity_split: bool = False


class ArchitectureConfig(_Strict):
    layers: List[LayerConfig] = Field(default_factory=lambda: [LayerConfig()])
    normalize_input: bool = True
    normalize_eps: float = Field(1e-2, ge=0)


class ScheduleConfig(_Strict):
    n_patches: int = Field(4096, ge=1)
    min_epochs: int = Field(20, ge=1)
    max_epochs: Optional[int] = None
    tol: float = Field(1e-3, gt=0)
    batch_size: Optional[int] = None
    lr: float = Field(1e-2, gt=0)
    rho: float = Field(0.95, gt=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    init_std: float = Field(1e-4, gt=0)
    shuffle: bool = True
    seed: int = 0


class ClassifierConfig(_Strict):
    kind: Literal["knn1", "svm"] = "knn1"
    grid: List[float] = list(DEFAULT_C_GRID)
    folds: int = Field(5, ge=2)
    train_fraction: float = Field(0.05, gt=0, lt=1)
    split_seed: Optional[int] = None


class BaselineConfig(_Strict):
    kind: Literal["none", "pca", "kpca", "omp1"] = "none"
    n_features: int = Field(120, ge=1)
    lengthscale: Union[Literal["auto"], float] = "auto"
    max_samples: int = Field(2000, ge=2)
    epochs: int = Field(10, ge=1)


class SceneConfig(_Strict):
    tile: int = Field(16, ge=2)


class RankConfig(_Strict):
    top_k: int = Field(3, ge=1)
    bins: int = Field(32, ge=2)
    render: bool = False


class OutputsConfig(_Strict):
    image: str = "image.ersf"
    labels: str = "labels.ersl"
    model: str = "model.json"
    log: str = "train_log.jsonl"
    report: str = "report.json"
    map: Optional[str] = "map.ppm"
    ranking: str = "ranking.json"


class PipelineConfig(_Strict):
    dataset: DatasetConfig
    architecture: ArchitectureConfig = Field(default_factory=ArchitectureConfig)
    schedule: Union[ScheduleConfig, List[ScheduleConfig]] = Field(default_factory=ScheduleConfig)
    mode: Literal["pixel", "scene"] = "pixel"
    scene: SceneConfig = Field(default_factory=SceneConfig)
    classifier: ClassifierConfig = Field(default_factory=ClassifierConfig)
    baseline: BaselineConfig = Field(default_factory=BaselineConfig)
    rank: RankConfig = Field(default_factory=RankConfig)
    outputs: OutputsConfig = Field(default_factory=OutputsConfig)
    seed: int = 0


# ---------------------------------------------------------------------------
# config handling


class Context:
    """A validated config plus path resolution rules."""

    def __init__(self, config, config_dir=".", out_dir=None):
        self.config = config
        self.config_dir = config_dir
        self.out_dir = out_dir if out_dir is not None else config_dir

    def input_path(self, p):
        return p if os.path.isabs(p) else os.path.join(self.config_dir, p)

    def output_path(self, p):
        return p if os.path.isabs(p) else os.path.join(self.out_dir, p)

    @property
    def seed(self):
        return self.config.seed


def load_config(path, seed=None, out_dir=None):
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    return make_context(raw, os.path.dirname(os.path.abspath(path)), seed, out_dir)


def make_context(raw, config_dir=".", seed=None, out_dir=None):
    try:
        cfg = PipelineConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_format_validation(exc))
    if seed is not None:
        cfg.seed = seed
    ctx = Context(cfg, config_dir, out_dir)
    _semantic_checks(ctx)
    return ctx


def _format_validation(exc):
    parts = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"])
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def _semantic_checks(ctx):
    cfg = ctx.config
    if cfg.dataset.synth is not None:
        cfg.dataset.synth.to_spec().validate()
    layers = [LayerSpec(**l.model_dump()) for l in cfg.architecture.layers]
    ArchitectureSpec(1, layers)  # polarity-split placement etc.
    for s in _schedule_list(cfg):
        TrainSchedule(**s.model_dump())
    if isinstance(cfg.schedule, list) and len(cfg.schedule) != len(layers):
        raise ConfigError(f"{len(cfg.schedule)} schedules for {len(layers)} layers")
    if cfg.classifier.kind == "svm" and not cfg.classifier.grid:
        raise ConfigError("classifier.grid must not be empty")


def _schedule_list(cfg):
    return cfg.schedule if isinstance(cfg.schedule, list) else [cfg.schedule]


def _synth_spec(ds):
    if ds.preset == "acceptance":
        return default_acceptance_spec()
    if ds.preset == "texture":
        return texture_task_spec()
    return ds.synth.to_spec()


def load_dataset(ctx, need_labels=True):
    ds = ctx.config.dataset
    if ds.image is not None:
        image = read_raster(ctx.input_path(ds.image))
        labels = None
        if ds.labels is not None:
            labels = read_labels(ctx.input_path(ds.labels))
            if labels.shape != image.shape[:2]:
                raise DataError(f"label raster {labels.shape} does not match image {image.shape[:2]}")
        elif need_labels:
            raise ConfigError("dataset.labels is required for this command")
        return image, labels
    seed = ds.seed if ds.seed is not None else ctx.seed
    return synth_dataset(_synth_spec(ds), seed)


def build_network(ctx):
    cfg = ctx.config
    sched = _schedule_list(cfg)
    sched = [s.model_dump() for s in sched]
    return EPLSNetwork(
        layers=[l.model_dump() for l in cfg.architecture.layers],
        schedule=sched if isinstance(cfg.schedule, list) else sched[0],
        mode=cfg.mode,
        normalize_input=cfg.architecture.normalize_input,
        normalize_eps=cfg.architecture.normalize_eps,
        random_state=ctx.seed,
    )


def _write_json(path, obj):
    atomic_write(path, dumps(obj).encode("utf-8"))


# ---------------------------------------------------------------------------
# sampling helpers


def stratified_split(y, fraction, seed):
    """Boolean train mask taking ``round(fraction * n_k)`` (at least 1) samples of each class.

    Every class keeps at least one test sample.
    """
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    train = np.zeros(y.shape[0], dtype=bool)
    for k in np.unique(y):
        idx = np.flatnonzero(y == k)
        if idx.size < 2:
            raise DataError(f"class {k} has {idx.size} labelled sample(s); cannot split")
        n_train = min(max(int(round(fraction * idx.size)), 1), idx.size - 1)
        train[rng.choice(idx, n_train, replace=False)] = True
    return train


def scene_tiles(image, labels, tile):
    """Non-overlapping tiles lying entirely inside one labelled region."""
    tiles, y = [], []
    R, C = labels.shape
    for r0 in range(0, R - tile + 1, tile):
        for c0 in range(0, C - tile + 1, tile):
            lab = labels[r0:r0 + tile, c0:c0 + tile]
            if lab[0, 0] > 0 and np.all(lab == lab[0, 0]):
                tiles.append(image[r0:r0 + tile, c0:c0 + tile])
                y.append(int(lab[0, 0]))
    if not tiles:
        raise DataError(f"no {tile}x{tile} tile lies inside a single labelled region")
    return tiles, np.array(y)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(ctx):
    ds = ctx.config.dataset
    if ds.image is not None:
        raise ConfigError("synth needs dataset.synth or dataset.preset")
    spec = _synth_spec(ds).validate()
    image, labels = load_dataset(ctx)
    write_raster(image, ctx.output_path(ctx.config.outputs.image))
    write_labels(labels, ctx.output_path(ctx.config.outputs.labels))
    layout = {"rows": spec.rows, "cols": spec.cols, "channels": spec.channels,
              "grid": list(spec.grid), "layout": spec.cell_layout(),
              "areas": {str(k): v for k, v in spec.region_areas().items()}}
    print(json.dumps(layout))
    return layout


def cmd_train(ctx):
    image, _ = load_dataset(ctx, need_labels=False)
    net = build_network(ctx)
    ArchitectureSpec(image.shape[2], [LayerSpec(**l.model_dump()) for l in ctx.config.architecture.layers]
                     ).output_shape(*image.shape[:2])
    net.fit(image)
    save_model(net, ctx.output_path(ctx.config.outputs.model))
    lines = []
    for layer, trace in enumerate(net.reports_, start=1):
        for rep in trace:
            lines.append(json.dumps({"layer": layer, **rep.to_dict()}))
    atomic_write(ctx.output_path(ctx.config.outputs.log), ("\n".join(lines) + "\n").encode("utf-8"))
    return net


def _fit_classifier(ctx, X, y):
    cc = ctx.config.classifier
    seed = cc.split_seed if cc.split_seed is not None else ctx.seed
    if cc.kind == "knn1":
        return NearestNeighbor().fit(X, y), {"kind": "knn1"}
    best, scores = cv_select_C(X, y, cc.grid, cc.folds, seed)
    info = {"kind": "svm", "C": best, "cv_accuracy": {repr(c): a for c, a in scores.items()}}
    return LinearSVM(C=best, random_state=seed).fit(X, y), info


def _evaluate(ctx, X, y, n_classes, extra=None, map_shape=None, map_features=None):
    cc = ctx.config.classifier
    seed = cc.split_seed if cc.split_seed is not None else ctx.seed
    train = stratified_split(y, cc.train_fraction, seed)
    clf, info = _fit_classifier(ctx, X[train], y[train])
    pred = clf.predict(X[~train])
    report = {"spec_version": SPEC_VERSION, "mode": ctx.config.mode, "classifier": info,
              "n_train": int(train.sum()), "n_test": int((~train).sum()),
              **evaluation_report(y[~train], pred, n_classes)}
    if extra:
        report.update(extra)
    _write_json(ctx.output_path(ctx.config.outputs.report), report)
    if ctx.config.outputs.map and map_features is not None:
        full = clf.predict(map_features).reshape(map_shape)
        render_map(full, ctx.output_path(ctx.config.outputs.map))
    return report


def classify_evaluate(ctx, features=None):
    """Extract features with the trained model, classify a labelled split and score the rest.

    ``features`` overrides feature extraction: an (rows, cols, F) array in
    pixel mode (test hook for oracle features).
    """
    image, labels = load_dataset(ctx)
    n_classes = int(labels.max())
    if ctx.config.mode == "scene":
        net = load_model(ctx.output_path(ctx.config.outputs.model))
        net.mode = "scene"
        tiles, y = scene_tiles(image, labels, ctx.config.scene.tile)
        X = net.transform(tiles) if features is None else np.asarray(features)
        return _evaluate(ctx, X, y, n_classes)
    if features is None:
        net = load_model(ctx.output_path(ctx.config.outputs.model))
        net.mode = "pixel"
        features = net.transform(image)
    F = np.asarray(features, dtype=np.float64)
    if F.shape[:2] != labels.shape:
        raise DataError("feature map does not match the label raster")
    flat = F.reshape(-1, F.shape[2])
    mask = labels.ravel() > 0
    return _evaluate(ctx, flat[mask], labels.ravel()[mask], n_classes,
                     map_shape=labels.shape, map_features=flat)


def baseline_evaluate(ctx):
    cfg = ctx.config
    b = cfg.baseline
    if b.kind == "none":
        raise ConfigError("baseline.kind must be pca, kpca or omp1")
    if cfg.mode != "pixel":
        raise ConfigError("baselines run in pixel mode only")
    image, labels = load_dataset(ctx)
    pixels = image.reshape(-1, image.shape[2])
    info = {"kind": b.kind}
    if b.kind == "pca":
        model = PCA(b.n_features).fit(pixels)
    elif b.kind == "kpca":
        ls = b.lengthscale if b.lengthscale == "auto" else float(b.lengthscale)
        model = KernelPCA(b.n_features, ls, b.max_samples, cfg.seed).fit(pixels)
        info["lengthscale"] = model.lengthscale_
        print(json.dumps({"lengthscale": model.lengthscale_}))
    else:
        model = OMP1(b.n_features, b.epochs, cfg.seed).fit(pixels)
    flat = model.transform(pixels)
    info["n_features"] = int(flat.shape[1])
    if b.kind == "omp1":
        info["dead_output_fraction"] = model.dead_fraction_
        info["dead_output_fraction_encoding"] = dead_output_fraction(flat)
    mask = labels.ravel() > 0
    return _evaluate(ctx, flat[mask], labels.ravel()[mask], int(labels.max()),
                     extra={"features": info}, map_shape=labels.shape, map_features=flat)


def rank(ctx, features=None):
    """Rank pixel features by mutual information with the labels."""
    cfg = ctx.config
    image, labels = load_dataset(ctx)
    if features is None:
        net = load_model(ctx.output_path(cfg.outputs.model))
        net.mode = "pixel"
        features = net.transform(image)
    F = np.asarray(features, dtype=np.float64)
    if F.shape[:2] != labels.shape:
        raise DataError("feature map does not match the label raster")
    mask = labels > 0
    order, mi = rank_features(F[mask], labels[mask], cfg.rank.bins)
    top = [int(j) for j in order[: cfg.rank.top_k]]
    result = {"spec_version": SPEC_VERSION, "bins": cfg.rank.bins, "top_k": top,
              "ranking": [{"feature": int(j), "mi": float(mi[j])} for j in order]}
    _write_json(ctx.output_path(cfg.outputs.ranking), result)
    if cfg.rank.render:
        for j in top:
            render_feature(F[:, :, j], ctx.output_path(f"feature_{j}.ppm"))
    return result


def cmd_render(ctx):
    _, labels = load_dataset(ctx)
    if not ctx.config.outputs.map:
        raise ConfigError("outputs.map is not set")
    render_map(labels, ctx.output_path(ctx.config.outputs.map))


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "classify": classify_evaluate,
    "baseline": baseline_evaluate,
    "rank": rank,
    "render": cmd_render,
}


def _error_exit(exc, code):
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv=None):
    parser = argparse.ArgumentParser(prog="featlearn", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default=None)
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        ctx = load_config(args.config, args.seed, args.out)
        if ctx.out_dir and not os.path.isdir(ctx.out_dir):
            os.makedirs(ctx.out_dir, exist_ok=True)
        COMMANDS[args.command](ctx)
    except ConfigError as exc:
        return _error_exit(exc, 2)
    except (DataError, FileNotFoundError, OSError) as exc:
        return _error_exit(exc, 3)
    except (NumericError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return _error_exit(exc, 4)
    except FeatlearnError as exc:
        return _error_exit(exc, exc.exit_code)
    return 0


if __name__ == "__main__":
    sys.exit(main())
