"""Unsupervised sparse convolutional feature learning for multi-band rasters."""

from .baselines import OMP1, PCA, KernelPCA
from .classify import LinearSVM, NearestNeighbor, cv_select_C, knn1_predict
from .epls import Inhibitor, build_target, epls_loss, loss_gradient
from .imageio import (SynthSpec, default_acceptance_spec, extract_patches, normalize_patches,
                      read_labels, read_raster, render_map, synth_dataset, texture_task_spec,
                      write_labels, write_raster)
from .metrics import class_accuracies, confusion, kappa, mutual_information, overall_accuracy
from .model import EPLSNetwork, load_model, save_model
from .network import (ArchitectureSpec, FilterBank, LayerSpec, convolve_valid, extract_features,
                      max_pool, quadrant_sum_pool)
from .trainer import TrainSchedule, pretrain_layer, pretrain_network

__version__ = "0.1.0"

__all__ = [
    "ArchitectureSpec", "EPLSNetwork", "FilterBank", "Inhibitor", "KernelPCA", "LayerSpec",
    "LinearSVM", "NearestNeighbor", "OMP1", "PCA", "SynthSpec", "TrainSchedule",
    "build_target", "class_accuracies", "confusion", "convolve_valid", "cv_select_C",
    "default_acceptance_spec", "epls_loss", "extract_features", "extract_patches", "kappa",
    "knn1_predict", "load_model", "loss_gradient", "max_pool", "mutual_information",
    "normalize_patches", "overall_accuracy", "pretrain_layer", "pretrain_network",
    "quadrant_sum_pool", "read_labels", "read_raster", "render_map", "save_model",
    "synth_dataset", "texture_task_spec", "write_labels", "write_raster",
]
