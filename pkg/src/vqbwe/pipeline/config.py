"""Run configuration: flat ``dotted.key = value`` text with typed sections."""
from __future__ import annotations

import ast
import hashlib
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path


@dataclass(frozen=True)
class CorpusSpec:
    train_count: int = 48
    val_count: int = 8
    test_count: int = 20
    duration: float = 1.0
    sample_rate: int = 8000
    f0: float = 250.0
    harmonics: int = 15
    templates: int = 4
    segment_min: int = 12        # frames
    segment_max: int = 40
    noise_level: float = 0.0
    peak: float = 0.8


@dataclass(frozen=True)
class CodecSpec:
    window_len: int = 64
    codebooks: int = 4
    codebook_size: int = 64
    iters: int = 25
    lowpass_variants: int = 2    # low-passed copies per utterance mixed into codebook training


@dataclass(frozen=True)
class DiffusionSpec:
    T: int = 100
    gamma_max: float = 0.9
    beta_max: float = 0.1
    beta_is_total: bool = True
    aux_weight: float = 0.001


@dataclass(frozen=True)
class ModelSpec:
    layers: int = 2
    feature_dim: int = 32
    state_dim: int = 16
    conv_width: int = 4
    heads: int = 2
    expand: int = 2
    conv_kernel: int = 5
    ffn_half_step: bool = True
    cond_dim: int = 32
    cond_layers: int = 2
    cond_heads: int = 2
    chunk: int = 16
    positional: bool = False     # crops would see shifted absolute positions


@dataclass(frozen=True)
class TrainSpec:
    epochs: int = 5
    lr: float = 3e-5
    decay: float = 0.8
    patience: int = 2
    threshold: float = 1e-4
    batch_size: int = 8
    crop: int = 64               # frames per training example
    steps_per_epoch: int = 0     # 0: one pass over the training split
    val_timesteps: int = 4       # timesteps per validation utterance


@dataclass(frozen=True)
class EvalSpec:
    cutoffs: tuple = (1000.0, 1500.0)
    fft_size: int = 2048
    hop: int = 512


@dataclass(frozen=True)
class RunConfig:
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    codec: CodecSpec = field(default_factory=CodecSpec)
    diffusion: DiffusionSpec = field(default_factory=DiffusionSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainSpec = field(default_factory=TrainSpec)
    eval: EvalSpec = field(default_factory=EvalSpec)
    seed: int = 0

    # -- serialisation -------------------------------------------------------
    def items(self) -> list[tuple[str, object]]:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if is_dataclass(v):
                out.extend((f"{f.name}.{g.name}", getattr(v, g.name)) for g in fields(v))
            else:
                out.append((f.name, v))
        return sorted(out)

    def to_text(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.items())

    def hash(self, exclude: tuple[str, ...] = ()) -> str:
        text = "".join(f"{k} = {_format(v)}\n" for k, v in self.items() if k not in exclude)
        return hashlib.sha256(text.encode()).hexdigest()

    def section_hash(self, *sections: str) -> str:
        """Hash over the listed sections (and the seed) only."""
        keys = tuple(k for k, _ in self.items()
                     if k != "seed" and k.partition(".")[0] not in sections)
        return self.hash(exclude=keys)

    def with_seed(self, seed: int | None) -> "RunConfig":
        return self if seed is None else replace(self, seed=int(seed))

    def with_updates(self, updates: dict[str, object]) -> "RunConfig":
        sections = {f.name: getattr(self, f.name) for f in fields(self)}
        for key, value in updates.items():
            section, _, name = key.partition(".")
            if section not in sections:
                raise KeyError(f"unknown config key {key!r}")
            if not name:
                if is_dataclass(sections[section]):
                    raise KeyError(f"config key {key!r} names a section")
                sections[section] = _coerce(key, value, type(sections[section]))
                continue
            spec = sections[section]
            if not is_dataclass(spec) or name not in {f.name for f in fields(spec)}:
                raise KeyError(f"unknown config key {key!r}")
            sections[section] = replace(spec, **{name: _coerce(key, value, type(getattr(spec, name)))})
        cfg = RunConfig(**sections)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        c, k, d, t, e = self.corpus, self.codec, self.diffusion, self.train, self.eval
        nyq = c.sample_rate / 2
        if c.f0 * c.harmonics >= nyq:
            raise ValueError("highest harmonic must lie below Nyquist")
        if min(c.train_count, c.test_count, c.templates) < 1 or c.val_count < 0:
            raise ValueError("corpus counts must be positive")
        if not 0 < c.segment_min <= c.segment_max:
            raise ValueError("need 0 < segment_min <= segment_max")
        if k.window_len % 2 or k.window_len <= 0:
            raise ValueError("codec.window_len must be even and positive")
        if d.T < 1 or t.epochs < 0 or t.batch_size < 1 or t.crop < 1:
            raise ValueError("bad diffusion/train sizes")
        for cut in e.cutoffs:
            if not 0 < cut < nyq:
                raise ValueError(f"eval cutoff {cut} outside (0, {nyq})")


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_format(x) for x in v)
    return repr(v)


def _coerce(key: str, value, kind):
    if isinstance(value, str):
        text = value.strip()
        if kind is bool:
            if text.lower() not in ("true", "false"):
                raise ValueError(f"{key}: expected true/false, got {text!r}")
            return text.lower() == "true"
        if kind is tuple:
            return tuple(float(p) for p in text.split(",") if p.strip())
        try:
            value = ast.literal_eval(text)
        except (ValueError, SyntaxError) as e:
            raise ValueError(f"{key}: cannot parse {text!r}") from e
    if kind is tuple:
        return tuple(float(v) for v in (value if isinstance(value, (list, tuple)) else [value]))
    if kind is int and isinstance(value, float) and value.is_integer():
        value = int(value)
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        raise ValueError(f"{key}: expected {kind.__name__}, got {value!r}")
    return value


def parse_config(text: str) -> RunConfig:
    updates: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key = key.strip()
        if key in updates:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        updates[key] = value
    return RunConfig().with_updates(updates)


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())
