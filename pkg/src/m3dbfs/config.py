"""
Run configuration and its ``key = value`` text format.

One setting per line, ``#`` starts a comment, blank lines are ignored and
missing keys keep their defaults. Unknown keys, unparsable values and out
of range values are reported with the offending line number.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .braindata import SynthConfig
from .errors import ConfigError
from .losses import LossConfig

PATH_KEYS = ("data_dir", "run_dir", "out_root", "stage1_ckpt", "stage2_ckpt", "stage3_ckpt")


@dataclass
class RunConfig:
    seed: int = 0

    # synthetic data and preprocessing
    n_samples: int = 200
    n_regions: int = 90
    timepoints: int = 200
    class_gap: float = 3.0
    noise: float = 1.0
    fc_density: float = 0.2
    sc_threshold: float = 0.0
    sc_log1p: bool = False
    keep_timeseries: bool = False

    # architecture
    gcn_layers: int = 2
    gcn_hidden: int = 64
    embed_dim: int = 64
    token_dim: int = 64
    expert_hidden: int = 0  # 0 means token_dim
    n_experts: int = 4
    top_k: int = 1
    moe_depth: int = 2

    # objectives
    tau: float = 4.0
    tau_c: float = 0.5
    tau_d: float = 0.5
    alpha: float = 0.6
    beta: float = 0.3
    kl_teacher_first: bool = True
    moe_loss: bool = True

    # optimisation
    lr: float = 0.005
    weight_decay: float = 1e-4
    max_epochs: int = 500
    patience: int = 300
    batch_size: int = 16
    val_fraction: float = 0.1
    warm_start: bool = False

    # evaluation
    holdout_folds: int = 5
    cv_folds: int = 10
    cv_repeats: int = 10
    n_jobs: int = 1

    # paths
    data_dir: str = ""
    run_dir: str = ""
    out_root: str = "runs"
    stage1_ckpt: str = ""
    stage2_ckpt: str = ""
    stage3_ckpt: str = ""

    def __post_init__(self):
        self.validate()

    @property
    def d_hidden(self) -> int:
        return self.expert_hidden or self.token_dim

    def validate(self) -> None:
        for key, message in _range_violations(self):
            raise ConfigError(f"{key}: {message}")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def synth_config(self) -> SynthConfig:
        return SynthConfig(
            n_samples=self.n_samples,
            N=self.n_regions,
            T=self.timepoints,
            class_gap=self.class_gap,
            noise=self.noise,
            seed=self.seed,
            fc_density=self.fc_density,
            sc_threshold=self.sc_threshold,
            sc_log1p=self.sc_log1p,
            keep_timeseries=self.keep_timeseries,
        )

    def loss_config(self) -> LossConfig:
        return LossConfig(self.tau, self.tau_c, self.tau_d, self.alpha, self.beta,
                          self.kl_teacher_first)

    def model_dict(self) -> dict:
        """Every setting except filesystem paths; what checkpoints echo."""
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name not in PATH_KEYS}

    def echo(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


def _range_violations(c: RunConfig):
    def unit_open(v):
        return 0.0 < v < 1.0

    checks = [
        ("alpha", unit_open(c.alpha), "must lie in (0,1)"),
        ("beta", unit_open(c.beta), "must lie in (0,1)"),
        ("n_experts", 1 <= c.n_experts <= 16, "must lie in [1,16]"),
        ("top_k", 1 <= c.top_k <= c.n_experts, f"must lie in [1,n_experts={c.n_experts}]"),
        ("tau", c.tau > 0, "must be positive"),
        ("tau_c", c.tau_c > 0, "must be positive"),
        ("tau_d", c.tau_d > 0, "must be positive"),
        ("fc_density", 0.0 < c.fc_density <= 1.0, "must lie in (0,1]"),
        ("val_fraction", unit_open(c.val_fraction), "must lie in (0,1)"),
        ("lr", c.lr > 0, "must be positive"),
        ("weight_decay", c.weight_decay >= 0, "must be nonnegative"),
        ("noise", c.noise > 0, "must be positive"),
        ("class_gap", c.class_gap >= 0, "must be nonnegative"),
        ("n_samples", c.n_samples >= 4, "must be >= 4"),
        ("n_regions", c.n_regions >= 8, "must be >= 8"),
        ("timepoints", c.timepoints >= 2, "must be >= 2"),
        ("expert_hidden", c.expert_hidden >= 0, "must be >= 0"),
        ("holdout_folds", c.holdout_folds >= 2, "must be >= 2"),
        ("cv_folds", c.cv_folds >= 2, "must be >= 2"),
        ("n_jobs", c.n_jobs >= 1, "must be >= 1"),
    ]
    for key in ("gcn_layers", "gcn_hidden", "embed_dim", "token_dim", "moe_depth", "max_epochs",
                "patience", "batch_size", "cv_repeats"):
        checks.append((key, getattr(c, key) >= 1, "must be >= 1"))
    for key, ok, message in checks:
        if not ok:
            yield key, f"{getattr(c, key)!r} {message}"


_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _convert(kind, raw: str):
    if kind is bool:
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    return raw


_TYPES = {f.name: {"int": int, "float": float, "bool": bool, "str": str}[f.type]
          for f in fields(RunConfig)}


def parse_config_text(text: str, source: str = "<config>", base: RunConfig | None = None) -> RunConfig:
    values = {}
    lines_of = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        content = line.split("#", 1)[0].strip()
        if not content:
            continue
        if "=" not in content:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {content!r}")
        key, raw = (part.strip() for part in content.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = _convert(_TYPES[key], raw)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: cannot parse {key}: {exc}") from None
        lines_of[key] = lineno
    merged = dict(dataclasses.asdict(base or RunConfig()))
    merged.update(values)
    candidate = RunConfig.__new__(RunConfig)
    candidate.__dict__.update(merged)
    for key, message in _range_violations(candidate):
        where = f"{source}:{lines_of[key]}" if key in lines_of else source
        raise ConfigError(f"{where}: {key} {message}")
    return RunConfig(**merged)


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, source=str(path))


def apply_overrides(cfg: RunConfig, pairs) -> RunConfig:
    """Apply ``key=value`` strings (e.g. from ``--set``) on top of ``cfg``.

    A key given more than once takes its last value; the result is validated
    as a whole, so the order of interdependent keys does not matter.
    """
    last = {pair.split("=", 1)[0].strip(): i for i, pair in enumerate(pairs)}
    kept = [pair for i, pair in enumerate(pairs) if last[pair.split("=", 1)[0].strip()] == i]
    return parse_config_text("\n".join(kept), source="--set", base=cfg)
