"""Flat dotted-key experiment configuration.

Config files are `key = value` lines (comments with '#'); CLI flags override
file values and defaults fill the rest. Unknown keys are rejected before any
computation so manifests stay trustworthy.
"""

import hashlib
from pathlib import Path

from .augment import AugmentationSpec, extended_spec, limited_spec
from .errors import ConfigInvalid
from .models import ClassifierConfig, EncoderConfig, MLPHeadConfig
from .supervised import AdamConfig, TrainConfig


def _parse_bool(text):
    t = str(text).strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise ConfigInvalid(f"not a boolean: {text!r}")


def _parse_int_list(text):
    return tuple(int(tok) for tok in str(text).replace(" ", "").split(",") if tok)


# key -> (parser, default)
SCHEMA = {
    "seed": (int, 0),
    "data.num_classes": (int, 11),
    "data.image_size": (int, 224),
    "data.synth_per_class": (int, 50),
    "data.synth_size": (int, 64),
    "encoder.block_channels": (_parse_int_list, (32, 64, 128, 336)),
    "encoder.kernel": (int, 3),
    "mlp.hidden_dim": (int, 512),
    "classifier.hidden_dims": (_parse_int_list, (128,)),
    "byol.tau": (float, 0.99),
    "byol.symmetrize_loss": (_parse_bool, False),
    "byol.use_target_network": (_parse_bool, True),
    "byol.use_momentum": (_parse_bool, True),
    "byol.use_predictor": (_parse_bool, True),
    "byol.projection_dim": (int, 256),
    "byol.epochs": (int, 20),
    "byol.batch_size": (int, 64),
    "byol.learning_rate": (float, 0.001),
    "train.max_epochs": (int, 100),
    "train.batch_size": (int, 64),
    "train.early_stop_patience": (int, 10),
    "train.freeze_encoder": (_parse_bool, False),
    "train.augment": (_parse_bool, True),
    "train.learning_rate": (float, 0.001),
    "adam.beta1": (float, 0.9),
    "adam.beta2": (float, 0.999),
    "adam.epsilon": (float, 1e-8),
    "augment.preset": (str, ""),
    "augment.rotation_max_deg": (float, 20.0),
    "augment.shift_frac": (float, 0.2),
    "augment.shear_range": (float, 0.2),
    "augment.zoom_range": (float, 0.2),
    "augment.hflip": (_parse_bool, True),
    "augment.brightness_jitter": (float, 0.0),
    "split.train": (float, 0.8),
    "split.val": (float, 0.1),
    "split.test": (float, 0.1),
    "split.stratified": (_parse_bool, True),
    "kfold.k": (int, 5),
}


class ExperimentConfig:
    """Resolved configuration: defaults < config file < explicit overrides."""

    def __init__(self, file=None, overrides=None):
        self.values = {key: default for key, (_, default) in SCHEMA.items()}
        if file is not None:
            self._apply(self._read_file(file), source=str(file))
        if overrides:
            self._apply(overrides, source="override")

    @staticmethod
    def _read_file(path):
        out = {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigInvalid(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in stripped.split("=", 1))
            out[key] = value
        return out

    def _apply(self, mapping, source):
        for key, value in mapping.items():
            if key not in SCHEMA:
                raise ConfigInvalid(f"unknown config key {key!r} (from {source})")
            parser, _ = SCHEMA[key]
            try:
                self.values[key] = parser(value) if isinstance(value, str) else value
            except (ValueError, TypeError) as exc:
                raise ConfigInvalid(f"bad value for {key}: {value!r}") from exc

    def __getitem__(self, key):
        return self.values[key]

    def with_overrides(self, mapping) -> "ExperimentConfig":
        clone = ExperimentConfig()
        clone.values = dict(self.values)
        clone._apply(mapping, source="override")
        return clone

    # -- typed sub-configs ---------------------------------------------------

    def encoder_config(self) -> EncoderConfig:
        size = self["data.image_size"]
        return EncoderConfig(
            input_size=(size, size, 3),
            block_channels=tuple(self["encoder.block_channels"]),
            kernel=self["encoder.kernel"],
        )

    def mlp_config(self) -> MLPHeadConfig:
        return MLPHeadConfig(
            hidden_dim=self["mlp.hidden_dim"], output_dim=self["byol.projection_dim"]
        )

    def classifier_config(self) -> ClassifierConfig:
        return ClassifierConfig(
            num_classes=self["data.num_classes"],
            hidden_dims=tuple(self["classifier.hidden_dims"]),
        )

    def byol_config(self):
        from .byol import BYOLConfig

        return BYOLConfig(
            tau=self["byol.tau"],
            symmetrize_loss=self["byol.symmetrize_loss"],
            use_target_network=self["byol.use_target_network"],
            use_momentum=self["byol.use_momentum"],
            use_predictor=self["byol.use_predictor"],
            projection_dim=self["byol.projection_dim"],
            epochs=self["byol.epochs"],
            batch_size=self["byol.batch_size"],
            learning_rate=self["byol.learning_rate"],
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            max_epochs=self["train.max_epochs"],
            batch_size=self["train.batch_size"],
            early_stop_patience=self["train.early_stop_patience"],
            freeze_encoder=self["train.freeze_encoder"],
            augment_training=self["train.augment"],
        )

    def adam_config(self, learning_rate_key="train.learning_rate") -> AdamConfig:
        return AdamConfig(
            learning_rate=self[learning_rate_key],
            beta1=self["adam.beta1"],
            beta2=self["adam.beta2"],
            epsilon=self["adam.epsilon"],
        )

    def augment_spec(self) -> AugmentationSpec:
        preset = self["augment.preset"]
        if preset == "limited":
            return limited_spec()
        if preset == "extended":
            return extended_spec()
        if preset:
            raise ConfigInvalid(f"unknown augment.preset {preset!r}")
        return AugmentationSpec(
            rotation_max_deg=self["augment.rotation_max_deg"],
            shift_frac=self["augment.shift_frac"],
            shear_range=self["augment.shear_range"],
            zoom_range=self["augment.zoom_range"],
            hflip=self["augment.hflip"],
            brightness_jitter=self["augment.brightness_jitter"],
        )

    def split_fractions(self):
        return (self["split.train"], self["split.val"], self["split.test"])

    # -- manifest ------------------------------------------------------------

    def render(self) -> str:
        lines = []
        for key in sorted(self.values):
            value = self.values[key]
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.render().encode("utf-8")).hexdigest()
