"""Plain-text configuration: one ``key = value`` per line, ``#`` comments.

Unknown keys are rejected. Defaults follow the published training recipe
wherever it specifies a value; everything else is the desk-scale preset.
"""

from .attention import AttentionConfig
from .losses import LossWeights
from .training import TrainConfig


class ConfigError(ValueError):
    """Malformed configuration text or invalid key/value."""

def _parse_bool(s):
    if s in ("true", "1", "yes"):
        return True
    if s in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _fmt_bool(v):
    return "true" if v else "false"


# key -> (parse, format, default)
SCHEMA = {
    "lr": (float, repr, 2e-4),
    "beta1": (float, repr, 0.5),
    "beta2": (float, repr, 0.999),
    "batch": (int, str, 1),
    "iters_stage1": (int, str, 300),
    "iters_stage2": (int, str, 500),
    "seed": (int, str, 0),
    "deterministic": (_parse_bool, _fmt_bool, True),
    "lambda_multi_level": (float, repr, 0.01),
    "lambda_reconstruction": (float, repr, 10.0),
    "lambda_adversarial": (float, repr, 0.2),
    "lambda_perceptual": (float, repr, 1.0),
    "lambda_style": (float, repr, 10.0),
    "attention_top_count": (int, str, 2),
    "attention_include_intra": (_parse_bool, _fmt_bool, True),
    "attention_eps": (float, repr, 1e-8),
    "with_attention": (_parse_bool, _fmt_bool, True),
    "depth": (int, str, 5),
    "width_scale": (float, repr, 0.125),
    "image_size": (int, str, 64),
    "normalized_norms": (_parse_bool, _fmt_bool, False),
    "checkpoint_every": (int, str, 0),
    "data_dir": (str, str, ""),
    "overfit_single": (_parse_bool, _fmt_bool, False),
    "mask_mode": (str, str, "centering"),
    "mask_side": (int, str, 0),  # 0 means image_size // 4
    "mask_bucket": (str, str, "20-30"),
}


def default_config():
    return {key: default for key, (_, _, default) in SCHEMA.items()}


def parse_config(text):
    """Parse configuration text into a fully-populated, typed dict."""
    values = default_config()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        parse, _, _ = SCHEMA[key]
        try:
            values[key] = parse(value)
        except ConfigError:
            raise
        except ValueError as e:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {e}") from e
    return values


def serialize_config(values):
    lines = []
    for key, (_, fmt, _) in SCHEMA.items():
        lines.append(f"{key} = {fmt(values[key])}")
    return "\n".join(lines) + "\n"


def parse_bucket(text):
    try:
        lo, _, hi = text.partition("-")
        lower, upper = float(lo), float(hi)
    except ValueError as e:
        raise ConfigError(f"bucket must look like '20-30', got {text!r}") from e
    from .masking import RatioBucket

    try:
        return RatioBucket(lower, upper)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def to_train_config(values):
    """Typed config dict -> TrainConfig (validating cross-field constraints)."""
    weights = LossWeights(
        multi_level=values["lambda_multi_level"],
        reconstruction=values["lambda_reconstruction"],
        adversarial=values["lambda_adversarial"],
        perceptual=values["lambda_perceptual"],
        style=values["lambda_style"],
    )
    attention = AttentionConfig(
        top_count=values["attention_top_count"],
        similarity_eps=values["attention_eps"],
        include_intra=values["attention_include_intra"],
    )
    if values["image_size"] % (2 ** values["depth"]):
        raise ConfigError(
            f"image_size {values['image_size']} must be divisible by 2^depth = {2 ** values['depth']}"
        )
    return TrainConfig(
        lr=values["lr"],
        beta1=values["beta1"],
        beta2=values["beta2"],
        batch=values["batch"],
        iters_stage1=values["iters_stage1"],
        iters_stage2=values["iters_stage2"],
        seed=values["seed"],
        weights=weights,
        attention=attention,
        deterministic=values["deterministic"],
        depth=values["depth"],
        width_scale=values["width_scale"],
        image_size=values["image_size"],
        normalized_norms=values["normalized_norms"],
        checkpoint_every=values["checkpoint_every"],
        with_attention=values["with_attention"],
    )
