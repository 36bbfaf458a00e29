"""Flat ``section.key = value`` run configuration.

Example::

    # grid
    grid.cell = 0.16
    grid.variant = SS3D-10
    anchors.yaws = 0.0, 1.5707963267948966

Unknown keys are rejected.  :meth:`RunConfig.to_text` writes every resolved
key so the file alone reproduces a run.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .anchors import AnchorConfig
from .errors import ConfigError
from .kitti_eval import EvalConfig
from .pillars import PillarGridConfig, VARIANTS
from .pseudo_lidar import ProjectionConfig

__all__ = ["RunConfig", "DEFAULTS", "parse_config_text", "load_config"]

DEFAULTS: dict[str, str] = {
    "grid.x_min": "0.0",
    "grid.x_max": "69.12",
    "grid.y_min": "-39.68",
    "grid.y_max": "39.68",
    "grid.z_min": "-3.0",
    "grid.z_max": "1.0",
    "grid.cell": "0.16",
    "grid.variant": "SS3D-6",
    "anchors.width": "1.6",
    "anchors.length": "3.9",
    "anchors.height": "1.56",
    "anchors.yaws": f"0.0, {math.pi / 2!r}",
    "anchors.z_center": "-1.0",
    "anchors.stride": "2",
    "anchors.pos_iou": "0.6",
    "anchors.neg_iou": "0.45",
    "anchors.class": "Car",
    "decode.score_floor": "0.05",
    "decode.nms_iou": "0.5",
    "eval.iou_min": "0.7",
    "eval.interp_points": "11",
    "eval.score_floor": "0.0",
    "eval.class": "Car",
    "projection.max_depth": "80.0",
    "projection.min_disparity": "1.0",
    "projection.z_min": "-inf",
    "projection.z_max": "inf",
    "projection.disparity_scale": "256.0",
    "projection.seg_scale": "255.0",
    "projection.default_baseline": "0.54",
    "io.calib_dir": "",
}


def parse_config_text(text: str) -> dict[str, str]:
    values = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {line_no}: expected 'key = value'")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"config line {line_no}: unknown key {key!r}")
        values[key] = val.strip()
    return values


@dataclass
class RunConfig:
    values: dict[str, str] = field(default_factory=lambda: dict(DEFAULTS))

    @classmethod
    def from_sources(cls, path: Optional[str] = None,
                     overrides: Iterable[tuple[str, str]] = ()) -> "RunConfig":
        """Defaults, then the config file, then command-line overrides."""
        values = dict(DEFAULTS)
        if path:
            try:
                text = open(path).read()
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            values.update(parse_config_text(text))
        for key, val in overrides:
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = str(val)
        cfg = cls(values)
        cfg.validate()
        return cfg

    def _float(self, key: str) -> float:
        try:
            return float(self.values[key])
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {self.values[key]!r}") from None

    def _int(self, key: str) -> int:
        try:
            return int(self.values[key])
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {self.values[key]!r}") from None

    def validate(self) -> None:
        try:
            self.grid, self.anchors, self.eval, self.projection
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def grid(self) -> PillarGridConfig:
        variant = self.values["grid.variant"]
        if variant not in VARIANTS:
            raise ConfigError(f"grid.variant: unknown variant {variant!r}")
        return PillarGridConfig(
            x_range=(self._float("grid.x_min"), self._float("grid.x_max")),
            y_range=(self._float("grid.y_min"), self._float("grid.y_max")),
            z_range=(self._float("grid.z_min"), self._float("grid.z_max")),
            cell=self._float("grid.cell"),
            variant=variant,
        )

    @property
    def anchors(self) -> AnchorConfig:
        try:
            yaws = tuple(float(t) for t in self.values["anchors.yaws"].split(",") if t.strip())
        except ValueError:
            raise ConfigError("anchors.yaws: expected comma-separated numbers") from None
        return AnchorConfig(
            anchor_dims=(self._float("anchors.width"), self._float("anchors.length"),
                         self._float("anchors.height")),
            yaws=yaws,
            z_center=self._float("anchors.z_center"),
            stride=self._int("anchors.stride"),
            pos_iou=self._float("anchors.pos_iou"),
            neg_iou=self._float("anchors.neg_iou"),
            class_name=self.values["anchors.class"],
        )

    @property
    def eval(self) -> EvalConfig:
        calib_dir = self.values["io.calib_dir"] or None
        return EvalConfig(
            iou_min=self._float("eval.iou_min"),
            n_recall_points=self._int("eval.interp_points"),
            score_floor=self._float("eval.score_floor"),
            calib_dir=calib_dir,
        )

    @property
    def projection(self) -> ProjectionConfig:
        return ProjectionConfig(
            max_depth=self._float("projection.max_depth"),
            min_disparity=self._float("projection.min_disparity"),
            height_window=(self._float("projection.z_min"), self._float("projection.z_max")),
        )

    def get(self, key: str) -> str:
        return self.values[key]

    def to_text(self) -> str:
        return "".join(f"{k} = {self.values[k]}\n" for k in DEFAULTS)
