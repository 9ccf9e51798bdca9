"""
Dataset directories on disk.

Layout::

    manifest.tsv      id<TAB>label<TAB>sc_file<TAB>fc_file[<TAB>ts_file]
    <matrix>.csv      comma-separated decimals, one row per line, no header

A raw directory for :func:`preprocess_raw` has the same shape with
``manifest.tsv`` header ``id<TAB>label<TAB>sc_file<TAB>ts_file``: a
fiber-count matrix and an ``N x T`` region time-series matrix per sample.

Floats are written with 17 significant digits, which round-trips every
float64 exactly. Adjacencies are not stored; they are rebuilt from the
matrices with the thresholds passed to :func:`load_dataset`.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import FormatError
from .preprocess import fiber_matrix, graphs_from_matrices, pearson_fc
from .types import FUNCTIONAL, STRUCTURAL, ConnectivityMatrix, Dataset, Sample, TimeSeries

MANIFEST = "manifest.tsv"
MANIFEST_HEADER = ("id", "label", "sc_file", "fc_file")
RAW_MANIFEST_HEADER = ("id", "label", "sc_file", "ts_file")


def format_float(x: float) -> str:
    return "%.17g" % x


def write_matrix(path, values) -> None:
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    lines = [",".join(format_float(v) for v in row) for row in values]
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_matrix(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"missing matrix file: {path}")
    rows = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            fields = line.split(",")
            if width is None:
                width = len(fields)
            elif len(fields) != width:
                raise FormatError(
                    f"{path}:{lineno}: expected {width} columns, found {len(fields)}"
                )
            try:
                rows.append([float(f) for f in fields])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric value") from None
    if not rows:
        raise FormatError(f"{path}: empty matrix file")
    return np.array(rows, dtype=np.float64)


def save_dataset(d: Dataset, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with_ts = any(s.timeseries is not None for s in d)
    header = MANIFEST_HEADER + (("ts_file",) if with_ts else ())
    rows = ["\t".join(header)]
    for s in d:
        sc_name, fc_name = f"sc_{s.id}.csv", f"fc_{s.id}.csv"
        write_matrix(directory / sc_name, _source(s.sc).values)
        write_matrix(directory / fc_name, _source(s.fc).values)
        fields = [s.id, str(s.label), sc_name, fc_name]
        if with_ts:
            ts_name = ""
            if s.timeseries is not None:
                ts_name = f"ts_{s.id}.csv"
                write_matrix(directory / ts_name, s.timeseries.values)
            fields.append(ts_name)
        rows.append("\t".join(fields))
    with open(directory / MANIFEST, "w", newline="\n") as fh:
        fh.write("\n".join(rows) + "\n")
    return directory


def _source(graph) -> ConnectivityMatrix:
    if graph.matrix is None:
        raise FormatError(f"{graph.modality} graph has no source connectivity matrix to save")
    return graph.matrix


def read_manifest(directory, header=MANIFEST_HEADER, optional=("ts_file",)) -> list[dict]:
    path = Path(directory) / MANIFEST
    if not path.is_file():
        raise FormatError(f"missing manifest: {path}")
    with open(path) as fh:
        lines = [ln.rstrip("\n").rstrip("\r") for ln in fh]
    if not lines or not lines[0]:
        raise FormatError(f"{path}:1: empty manifest")
    cols = tuple(lines[0].split("\t"))
    if cols[: len(header)] != header or any(c not in optional for c in cols[len(header):]):
        raise FormatError(f"{path}:1: bad header {cols!r}, expected {header!r}")
    entries = []
    seen = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != len(cols):
            raise FormatError(f"{path}:{lineno}: expected {len(cols)} fields, found {len(fields)}")
        entry = dict(zip(cols, fields))
        if entry["label"] not in ("0", "1"):
            raise FormatError(f"{path}:{lineno}: label must be 0 or 1, got {entry['label']!r}")
        if entry["id"] in seen:
            raise FormatError(f"{path}:{lineno}: duplicate id {entry['id']!r}")
        seen.add(entry["id"])
        entry["lineno"] = lineno
        entries.append(entry)
    if not entries:
        raise FormatError(f"{path}: manifest lists no samples")
    return entries


def load_dataset(
    directory,
    fc_density: float = 0.2,
    sc_threshold: float = 0.0,
    sc_log1p: bool = False,
) -> Dataset:
    directory = Path(directory)
    samples = []
    n_regions = None
    for entry in read_manifest(directory):
        sc = read_matrix(directory / entry["sc_file"])
        fc = read_matrix(directory / entry["fc_file"])
        for name, mat in (("sc_file", sc), ("fc_file", fc)):
            if mat.shape[0] != mat.shape[1]:
                raise FormatError(f"{directory / entry[name]}: matrix is not square {mat.shape}")
            if n_regions is None:
                n_regions = mat.shape[0]
            elif mat.shape[0] != n_regions:
                raise FormatError(
                    f"{directory / entry[name]}: {mat.shape[0]} regions, expected {n_regions}"
                )
        ts = None
        if entry.get("ts_file"):
            ts = TimeSeries(read_matrix(directory / entry["ts_file"]))
            if ts.region_count != n_regions:
                raise FormatError(
                    f"{directory / entry['ts_file']}: {ts.region_count} regions, expected {n_regions}"
                )
        sc_graph, fc_graph = graphs_from_matrices(
            ConnectivityMatrix(sc, STRUCTURAL),
            ConnectivityMatrix(fc, FUNCTIONAL),
            fc_density=fc_density,
            sc_threshold=sc_threshold,
            sc_log1p=sc_log1p,
        )
        samples.append(Sample(entry["id"], sc_graph, fc_graph, int(entry["label"]), ts))
    return Dataset(samples)


def preprocess_raw(
    directory,
    fc_density: float = 0.2,
    sc_threshold: float = 0.0,
    sc_log1p: bool = False,
) -> Dataset:
    """Build a dataset from raw fiber counts and region time series."""
    directory = Path(directory)
    samples = []
    n_regions = None
    for entry in read_manifest(directory, header=RAW_MANIFEST_HEADER, optional=()):
        sc_path, ts_path = directory / entry["sc_file"], directory / entry["ts_file"]
        try:
            sc = fiber_matrix(read_matrix(sc_path))
        except ValueError as exc:
            raise type(exc)(f"{sc_path}: {exc}") from None
        ts = TimeSeries(read_matrix(ts_path))
        try:
            fc = pearson_fc(ts)
        except ValueError as exc:
            raise type(exc)(f"{ts_path}: {exc}") from None
        if sc.size != fc.size:
            raise FormatError(f"{sc_path}: {sc.size} regions but {ts_path} has {fc.size}")
        if n_regions is None:
            n_regions = sc.size
        elif sc.size != n_regions:
            raise FormatError(f"{sc_path}: {sc.size} regions, expected {n_regions}")
        sc_graph, fc_graph = graphs_from_matrices(
            sc, fc, fc_density=fc_density, sc_threshold=sc_threshold, sc_log1p=sc_log1p
        )
        samples.append(Sample(entry["id"], sc_graph, fc_graph, int(entry["label"]), ts))
    return Dataset(samples)
