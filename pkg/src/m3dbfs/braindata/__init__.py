"""Paired SC/FC brain graphs: data model, preprocessing, synthesis, I/O and splits."""

from .io import load_dataset, preprocess_raw, read_manifest, read_matrix, save_dataset, write_matrix
from .preprocess import (
    build_graph,
    fiber_matrix,
    graphs_from_matrices,
    pearson_fc,
    threshold_absolute,
    threshold_proportional,
)
from .splits import kfold_split, stratified_holdout
from .synth import SynthConfig, synth_generate
from .types import (
    FC,
    FUNCTIONAL,
    SC,
    STRUCTURAL,
    BrainGraph,
    ConnectivityMatrix,
    Dataset,
    Sample,
    TimeSeries,
)

__all__ = [
    "load_dataset",
    "preprocess_raw",
    "read_manifest",
    "read_matrix",
    "save_dataset",
    "write_matrix",
    "build_graph",
    "fiber_matrix",
    "graphs_from_matrices",
    "pearson_fc",
    "threshold_absolute",
    "threshold_proportional",
    "kfold_split",
    "stratified_holdout",
    "SynthConfig",
    "synth_generate",
    "FC",
    "FUNCTIONAL",
    "SC",
    "STRUCTURAL",
    "BrainGraph",
    "ConnectivityMatrix",
    "Dataset",
    "Sample",
    "TimeSeries",
]
