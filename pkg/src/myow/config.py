"""Run configuration: nested dataclasses serialized as flat ``section.key = value`` text."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

from myow.augment import TransformSpec
from myow.engine import ModelConfig
from myow.miner import MinerConfig

NEURAL_T = "jitter(window=2) + dropout(p_min=0.0, p_max=0.2) + noise(sigma=1.5, p=0.5) + pepper(c=1.5, p_act=0.3, p=0.5)"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    # dataset file; when empty, ``generator`` (``reach``) builds one from ``generator_seed``
    path: str = ""
    generator: str = ""
    generator_seed: int = 0
    # split file, empty for a temporal split with ``ratios``, or ``all`` to train on every row
    split_path: str = ""
    ratios: tuple[float, ...] = (0.7, 0.1, 0.2)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 512
    checkpoint_every: int = 0
    # reserved; neither is implemented
    grad_clip: str = "none"
    early_stopping: str = "none"


@dataclass(frozen=True)
class OptimConfig:
    kind: str = "adamw"
    lr: float = 0.02
    weight_decay: float = 2e-5
    momentum: float = 0.9
    warmup_epochs: int = 100
    schedule: str = "cosine"
    final_lr: float = 0.0


@dataclass(frozen=True)
class EmaConfig:
    tau_base: float = 0.98
    tau_final: float = 1.0
    schedule: str = "cosine"


@dataclass(frozen=True)
class MiningConfig:
    lam: float = 1.0
    lam_warmup_epochs: int = 10


@dataclass(frozen=True)
class AugmentConfig:
    T: TransformSpec = field(default_factory=lambda: TransformSpec.from_text(NEURAL_T))
    # ``None`` means T_m = T
    T_m: TransformSpec | None = None

    @property
    def mined(self) -> TransformSpec:
        return self.T if self.T_m is None else self.T_m


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    mode: str = "myow"
    data: DataConfig = DataConfig()
    train: TrainConfig = TrainConfig()
    optim: OptimConfig = OptimConfig()
    ema: EmaConfig = EmaConfig()
    mining: MiningConfig = MiningConfig()
    miner: MinerConfig = MinerConfig(k=5, pool_size=1024, mask="exclude-same-trial")
    model: ModelConfig = ModelConfig()
    augment: AugmentConfig = AugmentConfig()

    def validate(self) -> RunConfig:
        if self.mode not in ("myow", "byol"):
            raise ConfigError(f"mode must be myow or byol, got {self.mode!r}")
        if self.optim.kind not in ("adamw", "sgd"):
            raise ConfigError(f"optim.kind must be adamw or sgd, got {self.optim.kind!r}")
        for name, sched in (("optim.schedule", self.optim.schedule), ("ema.schedule", self.ema.schedule)):
            if sched not in ("cosine", "constant"):
                raise ConfigError(f"{name} must be cosine or constant")
        if not 0.0 <= self.ema.tau_base <= 1.0 or not 0.0 <= self.ema.tau_final <= 1.0:
            raise ConfigError("tau values must lie in [0, 1]")
        if self.train.epochs < 1 or self.train.batch_size < 2:
            raise ConfigError("need epochs >= 1 and batch_size >= 2")
        if self.mining.lam < 0:
            raise ConfigError("mining.lam must be >= 0")
        if self.data.generator not in ("", "reach"):
            raise ConfigError(f"data.generator must be empty or reach, got {self.data.generator!r}")
        if self.train.grad_clip != "none" or self.train.early_stopping != "none":
            raise ConfigError("train.grad_clip and train.early_stopping are reserved and must be 'none'")
        return self


_SECTIONS = ("data", "train", "optim", "ema", "mining", "miner", "model", "augment")


def _format(value) -> str:
    if isinstance(value, TransformSpec):
        return value.to_text()
    if value is None:
        return "same"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(text: str, default, key: str):
    text = text.strip()
    try:
        if key == "augment.T_m":
            return None if text == "same" else TransformSpec.from_text(text)
        if isinstance(default, TransformSpec):
            return TransformSpec.from_text(text)
        if isinstance(default, bool):
            if text not in ("true", "false"):
                raise ValueError(f"expected true/false, got {text!r}")
            return text == "true"
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            conv = float if default and isinstance(default[0], float) else int
            return tuple(conv(v) for v in text.split(",") if v.strip())
        return text
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None


def to_text(cfg: RunConfig) -> str:
    lines = [f"seed = {cfg.seed}", f"mode = {cfg.mode}"]
    for sec in _SECTIONS:
        sub = getattr(cfg, sec)
        for f in fields(sub):
            lines.append(f"{sec}.{f.name} = {_format(getattr(sub, f.name))}")
    return "\n".join(lines) + "\n"


def from_text(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse ``key = value`` lines on top of ``base`` (default: a fresh RunConfig).

    A ``preset = name`` line, if present, must come first and selects the base.
    Unknown keys are rejected.
    """
    cfg = base or RunConfig()
    updates: dict[str, dict[str, object]] = {}
    top: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key = key.strip()
        if key == "preset":
            if updates or top:
                raise ConfigError(f"line {lineno}: preset must come before other keys")
            cfg = preset(value.strip())
            continue
        sec, dot, name = key.partition(".")
        if not dot:
            if key not in ("seed", "mode"):
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            top[key] = _parse(value, getattr(cfg, key), key)
            continue
        if sec not in _SECTIONS:
            raise ConfigError(f"line {lineno}: unknown section {sec!r}")
        sub = getattr(cfg, sec)
        names = {f.name for f in fields(sub)}
        if name not in names:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        default = getattr(sub, name)
        if default is None and key == "augment.T_m":
            default = TransformSpec()
        updates.setdefault(sec, {})[name] = _parse(value, default, key)
    try:
        for sec, vals in updates.items():
            cfg = replace(cfg, **{sec: replace(getattr(cfg, sec), **vals)})
        cfg = replace(cfg, **top)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return from_text(fh.read())


# -- presets -----------------------------------------------------------------------------

def _neural_appendix() -> RunConfig:
    return RunConfig()


def _neural_main() -> RunConfig:
    cfg = RunConfig()
    return replace(cfg,
                   mining=MiningConfig(lam=0.1, lam_warmup_epochs=10),
                   miner=replace(cfg.miner, k=3, pool_size=512),
                   ema=EmaConfig(tau_base=0.98, tau_final=0.98, schedule="constant"))


def _rodent() -> RunConfig:
    cfg = RunConfig()
    t = TransformSpec.from_text("jitter(window=3) + dropout(p_min=0.0, p_max=0.2)")
    return replace(cfg,
                   optim=replace(cfg.optim, lr=0.001),
                   model=replace(cfg.model, rep_size=64),
                   miner=replace(cfg.miner, mask="exclude-time-window", window_s=1800.0),
                   augment=AugmentConfig(T=t))


def _reach_desk() -> RunConfig:
    """Desk-scale reach protocol used by the acceptance runs."""
    cfg = RunConfig()
    return replace(cfg,
                   train=TrainConfig(epochs=150, batch_size=256),
                   optim=replace(cfg.optim, lr=0.02, warmup_epochs=10),
                   mining=MiningConfig(lam=1.0, lam_warmup_epochs=10),
                   miner=replace(cfg.miner, k=5, pool_size=512))


def _manifold_desk() -> RunConfig:
    cfg = RunConfig()
    return replace(cfg,
                   train=TrainConfig(epochs=200, batch_size=128),
                   optim=replace(cfg.optim, lr=0.01, warmup_epochs=10),
                   mining=MiningConfig(lam=1.0, lam_warmup_epochs=10),
                   miner=replace(cfg.miner, k=3, pool_size=256, mask="none"),
                   augment=AugmentConfig(T=TransformSpec.from_text("noise(sigma=0.14, p=1.0)")))


PRESETS = {
    "neural-appendix": _neural_appendix,
    "neural-main": _neural_main,
    "rodent": _rodent,
    "reach-desk": _reach_desk,
    "manifold-desk": _manifold_desk,
}


def preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name]().validate()


def with_mode(cfg: RunConfig, mode: str) -> RunConfig:
    """Switch between myow and byol; byol pins the mining weight to 0."""
    if mode == "byol":
        return replace(cfg, mode="byol", mining=replace(cfg.mining, lam=0.0)).validate()
    return replace(cfg, mode=mode).validate()
