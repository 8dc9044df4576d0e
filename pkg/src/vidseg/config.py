"""Flat key=value run configuration: defaults, parsing, validation, and the
builders that turn a parsed config into the typed module configs.

Unknown keys are an error. The canonical rendering (sorted key=value lines)
is what checkpoint headers embed, and re-parsing plus re-rendering the echo
reproduces it byte for byte.
"""

from __future__ import annotations

import os
from pathlib import Path

from .evaluate import ProbeConfig, RetrievalConfig
from .formats import render_flat
from .synth import DatasetSpec
from .trainer import TrainConfig

CONFIG_PATH_ENV = "VIDSEG_CONFIG_PATH"

_BOOL_WORDS = {"true": True, "false": False, "1": True, "0": False,
               "yes": True, "no": False}


def _parse_bool(text):
    try:
        return _BOOL_WORDS[text.strip().lower()]
    except KeyError:
        raise ValueError(f"expected a boolean, got '{text}'") from None


def _parse_int_list(text):
    return [int(v) for v in text.split(",") if v.strip()]


# key -> (parser, default); defaults come from the dataclasses themselves
def _defaults():
    flat = {}
    flat.update(DatasetSpec().to_flat())
    flat.update(TrainConfig(dataset=DatasetSpec()).to_flat())
    flat.update(ProbeConfig().to_flat())
    flat.update(RetrievalConfig().to_flat())
    return flat


DEFAULTS = _defaults()

_PARSERS = {}
for _key, _value in DEFAULTS.items():
    if isinstance(_value, bool):
        _PARSERS[_key] = _parse_bool
    elif isinstance(_value, int):
        _PARSERS[_key] = int
    elif isinstance(_value, float):
        _PARSERS[_key] = float
    elif isinstance(_value, list):
        _PARSERS[_key] = _parse_int_list
    else:
        _PARSERS[_key] = lambda text: text.strip()


def parse_config_text(text):
    """Parse key=value lines (blank lines and # comments allowed) into a
    complete flat config with defaults filled in."""
    flat = dict(DEFAULTS)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ValueError(f"line {lineno}: expected key=value, got '{raw}'")
        if key not in _PARSERS:
            raise ValueError(f"line {lineno}: unknown config key '{key}'")
        try:
            flat[key] = _PARSERS[key](value.strip())
        except ValueError as err:
            raise ValueError(f"line {lineno}: bad value for '{key}': {err}") from None
    return flat


def resolve_config_path(path):
    """The path itself, or the same name under $VIDSEG_CONFIG_PATH."""
    candidate = Path(path)
    if candidate.exists():
        return candidate
    search = os.environ.get(CONFIG_PATH_ENV)
    if search:
        fallback = Path(search) / path
        if fallback.exists():
            return fallback
    raise FileNotFoundError(f"config file '{path}' not found"
                            + (f" (also tried ${CONFIG_PATH_ENV})" if search else ""))


def load_config(path):
    return parse_config_text(resolve_config_path(path).read_text())


def parse_flat_strings(flat_strings):
    """Re-typed flat config from string values (e.g. a checkpoint echo)."""
    flat = dict(DEFAULTS)
    for key, value in flat_strings.items():
        if key not in _PARSERS:
            raise ValueError(f"unknown config key '{key}'")
        flat[key] = _PARSERS[key](str(value))
    return flat


def build_dataset_spec(flat) -> DatasetSpec:
    return DatasetSpec(
        classes=flat["dataset.classes"],
        videos_per_class=flat["dataset.videos_per_class"],
        frames=flat["dataset.frames"],
        height=flat["dataset.height"],
        width=flat["dataset.width"],
        untrimmed=flat["dataset.untrimmed"],
        action_coverage=flat["dataset.action_coverage"],
        noise=flat["dataset.noise"],
        seed=flat["dataset.seed"],
        train_fraction=flat["dataset.train_fraction"],
    )


def build_train_config(flat) -> TrainConfig:
    return TrainConfig(
        dataset=build_dataset_spec(flat),
        epochs=flat["train.epochs"],
        batch_size=flat["train.batch_size"],
        learning_rate=flat["train.learning_rate"],
        sgd_momentum=flat["train.sgd_momentum"],
        weight_decay=flat["train.weight_decay"],
        temperature=flat["train.temperature"],
        segments=flat["train.segments"],
        key_momentum=flat["train.key_momentum"],
        bank_capacity=flat["train.bank_capacity"],
        seed=flat["train.seed"],
        use_inter=flat["train.loss_inter"],
        use_intra=flat["train.loss_intra"],
        use_segment=flat["train.loss_segment"],
        use_order=flat["train.loss_order"],
        hidden_dim=flat["train.hidden_dim"],
        feature_dim=flat["train.feature_dim"],
        embed_dim=flat["train.embed_dim"],
        normalize_order_embeddings=flat["train.normalize_order_embeddings"],
        order_positive_uses_key=flat["train.order_positive_uses_key"],
        share_tuple_augment=flat["train.share_tuple_augment"],
        frame_source=flat["train.frame_source"],
        checkpoint_interval=flat["train.checkpoint_interval"],
    )


def build_probe_config(flat) -> ProbeConfig:
    return ProbeConfig(
        iterations=flat["probe.iterations"],
        l2_penalty=flat["probe.l2_penalty"],
        learning_rate=flat["probe.learning_rate"],
        seed=flat["probe.seed"],
        frames=flat["probe.frames"],
    )


def build_retrieval_config(flat) -> RetrievalConfig:
    return RetrievalConfig(ks=tuple(flat["retrieval.ks"]))


def render(flat):
    return render_flat(flat)
