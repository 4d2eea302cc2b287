"""JSON harness configuration.

Sections and defaults::

    {"mode": "tasd",
     "model":  {"d": 64, "h": 4, "n_layers": 2, "view_len": 4, "max_seq_len": 128,
                "M_max": 8, "N_max": 8},
     "train":  {"lr": 3e-5, "epochs": 20, "patience": 5, "seed": 0},
     "tr":     {"enabled": false, "rho": 0.15, "lambda": 0.01, "pass": "both"},
     "decode": {"strategy": "beam", "beam_width": 5, "max_len": 128},
     "data":   {"splits": {"ratios": [8, 1, 1]}, "max_rows": null, "max_cols": null,
                "min_count": 1}}
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

from .decoding import DecodeConfig
from .deliberation import PipelineConfig, normalize_mode
from .model import TasatgConfig
from .reconstruction import TrConfig
from .training import TrainConfig

DEFAULTS: Dict[str, Any] = {
    "mode": "tasd",
    "model": {"d": 64, "h": 4, "n_layers": 2, "view_len": 4, "max_seq_len": 128,
              "M_max": 8, "N_max": 8, "merge_numeric_headers": False},
    "train": {"lr": 3e-5, "epochs": 20, "patience": 5, "seed": 0},
    "tr": {"enabled": False, "rho": 0.15, "lambda": 1e-2, "pass": "both", "hidden": 0,
           "masked_only": True, "mask_stage": "e1"},
    "decode": {"strategy": "beam", "beam_width": 5, "max_len": 128,
               "length_penalty_alpha": 0.0, "draft_strategy": "greedy"},
    "data": {"splits": {"ratios": [8, 1, 1]}, "max_rows": None, "max_cols": None,
             "min_count": 1},
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict) and key != "splits":
            if not isinstance(value, dict):
                raise ConfigError(f"config section {path + key!r} must be an object")
            out[key] = _merge(base[key], value, path + key + ".")
        else:
            out[key] = value
    return out


@dataclass
class HarnessConfig:
    raw: Dict[str, Any] = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    @classmethod
    def from_dict(cls, data: Optional[dict] = None) -> "HarnessConfig":
        cfg = cls(_merge(DEFAULTS, data or {}))
        cfg.pipeline()  # validate eagerly
        return cfg

    @classmethod
    def from_file(cls, path) -> "HarnessConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
        return cls.from_dict(data)

    def set(self, section: str, key: str, value) -> None:
        self.raw[section][key] = value

    def model_config(self, vocab_size: int, n_views: int) -> TasatgConfig:
        m = self.raw["model"]
        return TasatgConfig(vocab_size=vocab_size, d=m["d"], h=m["h"], n_layers=m["n_layers"],
                            view_len=m["view_len"], n_views=n_views,
                            max_seq_len=m["max_seq_len"], m_max=m["M_max"], n_max=m["N_max"],
                            seed=self.raw["train"]["seed"],
                            merge_numeric_headers=m["merge_numeric_headers"])

    def pipeline(self) -> PipelineConfig:
        t, tr, dec = self.raw["train"], self.raw["tr"], self.raw["decode"]
        try:
            return PipelineConfig(
                mode=normalize_mode(self.raw["mode"]),
                train=TrainConfig(lr=t["lr"], epochs=t["epochs"], patience=t["patience"],
                                  seed=t["seed"]),
                tr=TrConfig(enabled=tr["enabled"], rho=tr["rho"], lam=tr["lambda"],
                            hidden=tr["hidden"], passes=tr["pass"],
                            masked_only=tr["masked_only"],
                            mask_stage=tr["mask_stage"]),
                decode=DecodeConfig(strategy=dec["strategy"], beam_width=dec["beam_width"],
                                    max_len=dec["max_len"],
                                    length_penalty_alpha=dec["length_penalty_alpha"]),
                draft_decode=DecodeConfig(strategy=dec["draft_strategy"],
                                          beam_width=dec["beam_width"], max_len=dec["max_len"]),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def dumps(self) -> str:
        return json.dumps(self.raw, indent=2, sort_keys=True)
