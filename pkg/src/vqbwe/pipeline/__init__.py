"""Seeded, config-driven synth / train / infer / eval stages."""
from .commands import EvalReport, cmd_eval, cmd_infer, cmd_synth, cmd_train, evaluate
from .config import RunConfig, load_config, parse_config

__all__ = ["EvalReport", "RunConfig", "cmd_eval", "cmd_infer", "cmd_synth", "cmd_train",
           "evaluate", "load_config", "parse_config"]
