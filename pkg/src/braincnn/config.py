"""Flat key = value run configuration with dotted namespaces.

Every key has a documented default; unknown keys are rejected.  A
RunConfig serializes back to the same text format with identical
semantics, which is what the run manifest relies on.
"""

from __future__ import annotations

from pathlib import Path

from .data import AugmentParams, SplitSpec
from .errors import ConfigError
from .layers import build_custom_cnn
from .optim import AdamaxHyper
from .tensor import ConvGeometry
from .train import TrainConfig


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _int_list(s: str) -> tuple[int, ...]:
    return tuple(int(p) for p in s.split(",") if p.strip())


DEFAULTS: dict[str, tuple] = {
    # (parser, default)
    "dataset.root": (str, ""),
    "output.dir": (str, ""),
    "model.preset": (str, "custom_cnn"),           # custom_cnn | custom_cnn_deep_head
    "model.input_size": (int, 224),
    "model.filters": (_int_list, (32, 64, 128, 256)),
    "model.dense_units": (int, 256),
    "model.dropout": (float, 0.5),
    "model.leaky_slope": (float, 0.01),
    "geometry.kernel": (int, 3),
    "geometry.stride": (int, 1),
    "geometry.padding": (str, "same"),
    "train.epochs": (int, 50),
    "train.batch_size": (int, 32),
    "train.patience": (int, 5),
    "train.min_delta": (float, 0.0),
    "train.loss_reduction": (str, "mean"),
    "optim.alpha": (float, 0.001),
    "optim.beta1": (float, 0.9),
    "optim.beta2": (float, 0.999),
    "optim.epsilon": (float, 1e-7),
    "optim.variant": (str, "standard"),
    "split.train": (float, 0.70),
    "split.val": (float, 0.15),
    "split.test": (float, 0.15),
    "split.seed": (int, 1234),
    "seeds.init": (int, 1),
    "seeds.shuffle": (int, 2),
    "seeds.augment": (int, 3),
    "augment.enabled": (_bool, True),
    "augment.rotation": (float, 40.0),
    "augment.shift": (float, 0.20),
    "augment.shear_enabled": (_bool, True),
    "augment.shear": (float, 10.0),
    "augment.zoom": (float, 0.20),
    "augment.flip": (_bool, True),
}


class RunConfig:
    def __init__(self, values: dict | None = None):
        self.values = {k: d for k, (_, d) in DEFAULTS.items()}
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key: str, raw):
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key: {key}")
        parser = DEFAULTS[key][0]
        try:
            self.values[key] = raw if not isinstance(raw, str) else parser(raw)
        except ValueError as e:
            raise ConfigError(f"bad value for {key}: {e}") from None

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        cfg = cls()
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            cfg.set(key.strip(), value.strip())
        return cfg

    def to_text(self) -> str:
        lines = []
        for key in sorted(self.values):
            v = self.values[key]
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"

    # ----------------------------------------------------- object builders

    def split_spec(self) -> SplitSpec:
        return SplitSpec(self["split.train"], self["split.val"],
                         self["split.test"], self["split.seed"])

    def augment_params(self) -> AugmentParams | None:
        if not self["augment.enabled"]:
            return None
        return AugmentParams(
            max_rotation_degrees=self["augment.rotation"],
            max_shift_fraction=self["augment.shift"],
            shear_enabled=self["augment.shear_enabled"],
            max_shear_degrees=self["augment.shear"],
            max_zoom_fraction=self["augment.zoom"],
            horizontal_flip_enabled=self["augment.flip"])

    def geometry(self) -> ConvGeometry:
        return ConvGeometry(self["geometry.kernel"], self["geometry.kernel"],
                            self["geometry.stride"], self["geometry.padding"])

    def build_model(self, class_count: int):
        preset = self["model.preset"]
        if preset not in ("custom_cnn", "custom_cnn_deep_head"):
            raise ConfigError(f"unknown model.preset: {preset}")
        size = self["model.input_size"]
        return build_custom_cnn(
            input_shape=(size, size, 3), class_count=class_count,
            filters=self["model.filters"], geometry=self.geometry(),
            dense_units=self["model.dense_units"],
            dropout_rate=self["model.dropout"],
            leaky_slope=self["model.leaky_slope"],
            head="deep" if preset == "custom_cnn_deep_head" else "standard")

    def train_config(self, checkpoint_path=None) -> TrainConfig:
        return TrainConfig(
            epochs=self["train.epochs"], batch_size=self["train.batch_size"],
            patience=self["train.patience"], min_delta=self["train.min_delta"],
            hyper=AdamaxHyper(self["optim.alpha"], self["optim.beta1"],
                              self["optim.beta2"], self["optim.epsilon"],
                              self["optim.variant"]),
            init_seed=self["seeds.init"], shuffle_seed=self["seeds.shuffle"],
            augment_seed=self["seeds.augment"], augment=self.augment_params(),
            image_size=self["model.input_size"],
            loss_reduction=self["train.loss_reduction"],
            checkpoint_path=checkpoint_path)
