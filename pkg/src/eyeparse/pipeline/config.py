"""Pipeline settings and the ``key = value`` config file."""

import dataclasses
from dataclasses import dataclass

from ..dqn import SearchConfig
from ..errors import ConfigurationError
from .synth import CLASSES, EASY_CLASSES


@dataclass
class PipelineConfig:
    seed: int = 0
    unit_size: float = 0.1
    classes: tuple = CLASSES
    easy_classes: tuple = EASY_CLASSES
    order: tuple = ()               # phase-2 class order; empty = by mean object volume
    train_fraction: float = 0.7
    # synthetic data
    scenes: int = 10
    # reward CNN
    cnn_windows: int = 200
    cnn_epochs: int = 30
    cnn_lr: float = 0.02
    cnn_batch: int = 10
    cnn_mining_rounds: int = 2
    cnn_mining_pool: int = 200      # candidate negatives scored per room and round
    # Q network pre-training
    dqn_episodes: int = 1
    dqn_mis: int = 150
    # residual RNN
    rnn_epochs: int = 60
    rnn_lr: float = 0.1
    rnn_dropout: float = 0.5
    rnn_chunk: int = 256
    rnn_windows: int = 6            # refinement windows per object
    refine: bool = True
    refine_margin: float = 0.25     # locked window grows by this share of its side before refinement
    # window (re)start: "proposal" = best-scoring box of the class's mean size, or "center" / "full"
    window_start: str = "proposal"
    proposal_stride: int = 1
    # search
    mis: int = 600
    mrs: int = 1
    mss: int = 3
    lam: float = 0.1
    mth: float = 0.9
    k: int = 13
    eta: float = 0.2
    patience: int = 5
    winner_replay: bool = True
    max_locks: int = 0              # 0 = expected objects per room from training data

    def search_config(self, **overrides):
        names = {f.name for f in dataclasses.fields(SearchConfig)}
        values = {k: v for k, v in dataclasses.asdict(self).items() if k in names}
        values.update(overrides)
        return SearchConfig(**values)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def _coerce(name, raw, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(v.strip() for v in raw.split(",") if v.strip())
    except ValueError:
        raise ConfigurationError(f"{name}: cannot read {raw!r} as {type(default).__name__}") from None
    return raw


def parse_config_text(text, base=None):
    base = base if base is not None else PipelineConfig()
    fields = {f.name: getattr(base, f.name) for f in dataclasses.fields(base)}
    changes = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in fields:
            raise ConfigurationError(f"line {lineno}: unknown setting {key!r}")
        changes[key] = _coerce(key, value, fields[key])
    return base.replace(**changes)


def load_config(path=None, overrides=None):
    """File settings first, then ``overrides`` (e.g. from the command line)."""
    cfg = PipelineConfig()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                cfg = parse_config_text(fh.read(), cfg)
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    if overrides:
        cfg = cfg.replace(**{k: v for k, v in overrides.items() if v is not None})
    return cfg


def format_config(cfg):
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ", ".join(v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
