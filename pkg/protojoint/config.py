from __future__ import annotations

import logging
import os
from collections.abc import Mapping
from dataclasses import dataclass
from functools import lru_cache
from typing import TYPE_CHECKING, Any

import fsspec
import yaml

from protojoint.exceptions import ConfigError
from protojoint.types import Interaction, Mode, SclSource, WindowNorm

if TYPE_CHECKING:
    from protojoint.checkpoint import CheckpointBackend

log = logging.getLogger(__name__)

CONF_DECLARATION = os.path.join(os.path.dirname(__file__), "config_declaration.yml")
CONF_MODE = "mode"
CONF_CHECKPOINT_FORMAT = "checkpoint_format"

DEFAULT_CHECKPOINT_FORMAT = "json"

# weights each mode switches off
DISABLED_WEIGHTS: dict[str, tuple[str, ...]] = {
    "oo": ("gamma", "delta"),
    "wo": ("delta",),
    "ww": (),
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass(frozen=True)
class OptionDeclaration:
    """One declared configuration key.

    Attributes:
        key: Name used in config files and as the CLI flag stem.
        type: One of ``int``, ``float``, ``bool``, ``str``.
        default: Value used when neither file nor flags set the key.
        allowed_values: (Optional) Closed set of accepted values.
        minimum: (Optional) Inclusive lower bound.
        below: (Optional) Exclusive upper bound.
        positive: Whether the value must be strictly greater than 0.
        description: Human-readable help text.
    """

    key: str
    type: str
    default: Any
    allowed_values: tuple[Any, ...] | None = None
    minimum: float | None = None
    below: float | None = None
    positive: bool = False
    description: str = ""

    def coerce(self, raw: Any) -> Any:
        """Convert a raw file string or a typed flag value to the declared type."""
        if raw is None:
            raise ConfigError(f"{self.key} has no value")

        try:
            value = self._convert(raw)
        except (TypeError, ValueError) as err:
            raise ConfigError(f"cannot parse {self.key}={raw!r} as {self.type}") from err

        self.validate(value)
        return value

    def _convert(self, raw: Any) -> Any:
        if self.type == "bool":
            if isinstance(raw, bool):
                return raw
            text = str(raw).strip().lower()
            if text in _TRUE:
                return True
            if text in _FALSE:
                return False
            raise ValueError(text)

        if self.type == "int":
            if isinstance(raw, bool) or (isinstance(raw, float) and not raw.is_integer()):
                raise ValueError(raw)
            return int(str(raw).strip()) if isinstance(raw, str) else int(raw)

        if self.type == "float":
            if isinstance(raw, bool):
                raise ValueError(raw)
            return float(str(raw).strip()) if isinstance(raw, str) else float(raw)

        return str(raw).strip()

    def validate(self, value: Any) -> None:
        if self.allowed_values is not None and value not in self.allowed_values:
            allowed = ", ".join(str(v) for v in self.allowed_values)
            raise ConfigError(f"{self.key} must be one of {allowed}, got {value!r}")

        if self.positive and value <= 0:
            raise ConfigError(f"{self.key} must be positive")

        if self.minimum is not None and value < self.minimum:
            raise ConfigError(f"{self.key} must be >= {self.minimum:g}")

        if self.below is not None and value >= self.below:
            raise ConfigError(f"{self.key} must be < {self.below:g}")


@lru_cache(maxsize=1)
def get_declarations() -> dict[str, OptionDeclaration]:
    """Return every declared option keyed by name, in declaration order."""
    with open(CONF_DECLARATION, encoding="utf-8") as f:
        document = yaml.safe_load(f)

    declarations: dict[str, OptionDeclaration] = {}

    for group in document["groups"]:
        for option in group["options"]:
            allowed = option.get("allowed_values")
            declarations[option["key"]] = OptionDeclaration(
                key=option["key"],
                type=option.get("type", "str"),
                default=option["default"],
                allowed_values=tuple(allowed) if allowed else None,
                minimum=option.get("minimum"),
                below=option.get("below"),
                positive=option.get("positive", False),
                description=str(option.get("description", "")).strip(),
            )

    return declarations


def _field_name(key: str) -> str:
    return "lambda_" if key == "lambda" else key


@dataclass(frozen=True)
class TrainConfig:
    """Resolved training configuration.

    Build instances through :func:`build_config` or :func:`parse_config` so
    declarations, defaults and mode rules are applied.
    """

    mode: Mode
    lambda_: float
    gamma: float
    delta: float
    tau: float
    scl_normalize: bool
    scl_source: SclSource
    d_w: int
    d_h: int
    dropout: float
    window: int
    window_norm: WindowNorm
    interaction: Interaction
    optimizer: str
    learning_rate: float
    weight_decay: float
    beta1: float
    beta2: float
    eps: float
    grad_clip: float
    epochs: int
    episodes_per_epoch: int
    u_max: int
    max_retries: int
    dev_episodes: int
    seed: int
    checkpoint_format: str

    @property
    def d(self) -> int:
        """Size of an encoder token state."""
        return 2 * self.d_h

    @property
    def uses_ic_scl(self) -> bool:
        return self.mode in ("wo", "ww")

    @property
    def uses_sf_scl(self) -> bool:
        return self.mode == "ww"

    def as_dict(self) -> dict[str, Any]:
        """Return config values keyed by their declared names."""
        return {key: getattr(self, _field_name(key)) for key in get_declarations()}

    def replace(self, **changes: Any) -> TrainConfig:
        """Return a copy with ``changes`` applied and re-validated.

        Keys use declared names, so ``lambda`` may be passed via ``**{"lambda": 0.3}``.
        """
        values = self.as_dict()
        values.update(changes)
        return build_config(values, explicit=set(changes))

    def to_text(self) -> str:
        """Serialize as the flat ``key=value`` format read by :func:`parse_config`."""
        lines = []
        for key, value in self.as_dict().items():
            text = str(value).lower() if isinstance(value, bool) else repr(value) if isinstance(value, float) else value
            lines.append(f"{key}={text}")
        return "\n".join(lines) + "\n"


def build_config(values: Mapping[str, Any] | None = None, explicit: set[str] | None = None) -> TrainConfig:
    """Validate ``values`` against the declarations and fill in defaults.

    Args:
        values: Raw or typed values keyed by declared names.
        explicit: Keys that were supplied by the user. Weights a mode disables
            are zeroed when defaulted and rejected when explicitly positive.
            Defaults to every key in ``values``.

    Raises:
        ConfigError: unknown key, unparsable value, bound violation or a
            mode/weight contradiction.
    """
    declarations = get_declarations()
    values = dict(values or {})
    explicit = set(values) if explicit is None else explicit

    unknown = sorted(set(values) - set(declarations))
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r}")

    resolved: dict[str, Any] = {}
    for key, declaration in declarations.items():
        resolved[key] = declaration.coerce(values[key]) if key in values else declaration.default

    mode = resolved[CONF_MODE]
    for weight in DISABLED_WEIGHTS[mode]:
        if weight in explicit and resolved[weight] > 0:
            raise ConfigError(f"mode={mode} disables {weight}, got {weight}={resolved[weight]:g}")
        resolved[weight] = 0.0

    return TrainConfig(**{_field_name(key): value for key, value in resolved.items()})


def read_config_file(path: str) -> dict[str, str]:
    """Read a flat ``key=value`` file. Blank lines and ``#`` comments are ignored."""
    declarations = get_declarations()
    values: dict[str, str] = {}

    with fsspec.open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):  # type: ignore
            text = line.split("#", 1)[0].strip()
            if not text:
                continue

            if "=" not in text:
                raise ConfigError(f"expected key=value at line {number}")

            key, raw = (part.strip() for part in text.split("=", 1))
            if key not in declarations:
                raise ConfigError(f"unknown key {key!r} at line {number}")

            values[key] = raw

    return values


def parse_config(path: str | None = None, overrides: Mapping[str, Any] | None = None) -> TrainConfig:
    """Resolve a TrainConfig from an optional file and flag overrides.

    Flags win over file values, defaults are applied last. Overrides set to
    ``None`` count as not given.
    """
    values: dict[str, Any] = read_config_file(path) if path else {}
    values.update({key: value for key, value in (overrides or {}).items() if value is not None})

    config = build_config(values)
    log.debug("Resolved config: %s", config.as_dict())
    return config


def default_config(**changes: Any) -> TrainConfig:
    """Return the declared defaults with ``changes`` applied (handy in code and tests)."""
    return build_config(changes or None)


def get_checkpoint_backend(fmt: str | None = None) -> CheckpointBackend:
    """Return a CheckpointBackend instance for the configured format.

    Supported values:

    * ``"json"`` *(default)*: sorted JSON container with base64 arrays.
    * ``"binary"``: ``PJCK`` container with a raw little-endian payload.

    Unknown values fall back to ``"json"`` with a warning.
    """
    from protojoint.checkpoint import BinaryCheckpointBackend, JsonCheckpointBackend  # noqa: PLC0415

    backend = (fmt or DEFAULT_CHECKPOINT_FORMAT).strip().lower()

    if backend == "binary":
        return BinaryCheckpointBackend()

    if backend != "json":
        log.warning("Unknown checkpoint_format value %r, falling back to 'json'.", backend)

    return JsonCheckpointBackend()
