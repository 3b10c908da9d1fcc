"""Run configuration: a ``key = value`` text file with ``#`` comments."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, Iterable, Optional, Union

ARCH_DEFAULTS = {
    "unet": {"iterations": 65000, "loss": "cross_entropy"},
    "vnet": {"iterations": 15000, "loss": "dice"},
}
PATH_KEYS = ("manifest", "output")


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


@dataclass
class RunConfig:
    arch: str = "unet"
    base_channels: int = 64
    iterations: Optional[int] = None
    learning_rate: float = 1e-4
    seed: int = 0
    loss: Optional[str] = None
    alpha: float = 0.1
    folds: int = 10
    manifest: Optional[Path] = None
    output: Optional[Path] = None
    eval_every: int = 1000
    checkpoint_every: int = 1000
    ff_threshold_enabled: bool = False

    def __post_init__(self):
        if self.arch not in ARCH_DEFAULTS:
            raise ValueError(f"arch must be 'unet' or 'vnet', got {self.arch!r}")
        if self.iterations is None:
            self.iterations = ARCH_DEFAULTS[self.arch]["iterations"]
        if self.loss is None:
            self.loss = ARCH_DEFAULTS[self.arch]["loss"]
        if self.loss not in ("cross_entropy", "dice"):
            raise ValueError(f"loss must be 'cross_entropy' or 'dice', got {self.loss!r}")
        for name in ("base_channels", "folds", "eval_every", "checkpoint_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")

    def require(self, *keys: str) -> None:
        missing = [k for k in keys if getattr(self, k) is None]
        if missing:
            raise ValueError(f"config is missing required key(s): {', '.join(missing)}")

    def to_text(self) -> str:
        lines = ["# resolved run configuration"]
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = str(v).lower()
            lines.append(f"{f.name} = {'' if v is None else v}")
        return "\n".join(lines) + "\n"

    def write(self, path: Union[str, os.PathLike]) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")


_CONVERTERS = {
    "arch": str.strip,
    "base_channels": int,
    "iterations": int,
    "learning_rate": float,
    "seed": int,
    "loss": str.strip,
    "alpha": float,
    "folds": int,
    "manifest": str.strip,
    "output": str.strip,
    "eval_every": int,
    "checkpoint_every": int,
    "ff_threshold_enabled": _bool,
}


def parse_pairs(lines: Iterable[str], base: Path, origin: str = "<config>") -> Dict[str, object]:
    """Parse ``key = value`` lines. Relative paths resolve against ``base``."""
    out: Dict[str, object] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{origin}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _CONVERTERS:
            raise ValueError(f"{origin}:{lineno}: unknown config key {key!r}")
        if value == "":
            continue
        try:
            converted = _CONVERTERS[key](value)
        except ValueError as exc:
            raise ValueError(f"{origin}:{lineno}: bad value for {key}: {exc}") from None
        if key in PATH_KEYS:
            converted = (base / converted).resolve()
        out[key] = converted
    return out


def load_config(path: Optional[Union[str, os.PathLike]] = None, overrides: Iterable[str] = ()) -> RunConfig:
    """Read a config file (optional) and apply ``key=value`` overrides on top.

    Paths inside the file resolve against the file's directory; paths given as
    overrides resolve against the working directory.
    """
    values: Dict[str, object] = {}
    if path is not None:
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        values.update(parse_pairs(text.splitlines(), path.parent, str(path)))
    values.update(parse_pairs(overrides, Path.cwd(), "--set"))
    return RunConfig(**values)
