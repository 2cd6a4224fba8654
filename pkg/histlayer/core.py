import os
from pathlib import Path
from typing import Any, Dict, Generic, Iterable, TypeVar

from addict import Dict as AddictDict

from .serialization import yaml_load


class HistLayerError(Exception):
    """Base exception for histlayer errors."""


class BinningError(HistLayerError, ValueError):
    """Raised when the bin count or bandwidth is invalid."""


class ShapeMismatch(HistLayerError, ValueError):
    """Raised when channels, stacks or gradients do not share a shape."""


class ConfigMismatch(HistLayerError, ValueError):
    """Raised when combining objects built with different binning."""


class EmptyDistribution(HistLayerError):
    """Raised when a joint histogram carries no mass."""


class DegenerateJoint(HistLayerError):
    """Raised when the joint entropy is zero and D_MI is undefined."""


class NonFiniteValue(HistLayerError):
    """Raised when a function under gradient check is not finite."""


class ImageReadError(HistLayerError):
    """Raised when an image cannot be read or decoded."""


class HistogramFormatError(HistLayerError):
    """Raised when a serialized histogram is malformed."""


class SettingsError(HistLayerError):
    """Raised when the settings file cannot be loaded."""


class OptimizationError(HistLayerError):
    """Raised when the optimizer diverges."""


K = TypeVar("K")
V = TypeVar("V")


class DotDict(AddictDict, Generic[K, V]):
    """A dictionary whose values are gettable using attributes."""

    def __missing__(self, key):
        raise KeyError(key)


class Settings:
    """
    Optional YAML settings providing defaults for the command line.

    Values are looked up in the settings file; the thread count can also be
    provided through the environment, which takes priority over the file.
    """

    DEFAULT_SETTINGS_PATH = "histlayer.yml"
    THREADS_ENV = "HISTLAYER_THREADS"
    KEYS = frozenset(
        {
            "bins",
            "bandwidth_ratio",
            "lr",
            "steps",
            "seed",
            "lambda_emd",
            "lambda_mi",
            "log_every",
            "init",
            "threads",
        }
    )

    def __init__(self, settings_path: str | None = None):
        """
        Initialize the settings loader.

        Args:
            settings_path: Path to the YAML settings file
        """

        self.explicit = settings_path is not None
        self.settings_path = Path(settings_path or self.DEFAULT_SETTINGS_PATH)
        self._config_cache: DotDict[str, Any] | None = None

    @property
    def config(self) -> DotDict[str, Any]:
        """
        Get the settings dictionary.

        A missing default file yields empty settings, a missing explicit file
        is an error.
        """

        if self._config_cache is None:
            if not self.settings_path.exists():
                if self.explicit:
                    raise SettingsError(f"Settings file {self.settings_path} not found")
                self._config_cache = DotDict()
                return self._config_cache

            try:
                data = yaml_load(self.settings_path.read_text()) or {}
            except Exception as e:
                raise SettingsError(f"Failed to load settings: {e}")

            if not isinstance(data, dict):
                raise SettingsError(f"Settings file {self.settings_path} is not a mapping")
            unknown = set(data) - self.KEYS
            if unknown:
                raise SettingsError(f"Unknown settings: {', '.join(sorted(unknown))}")

            self._config_cache = DotDict(data)

        return self._config_cache

    @property
    def threads(self) -> int | None:
        """Get the thread count from the environment or the settings file."""

        value = os.environ.get(self.THREADS_ENV)
        if value:
            try:
                return int(value)
            except ValueError:
                raise SettingsError(f"{self.THREADS_ENV} must be an integer, got {value!r}")

        return self.config.get("threads")

    def default_map(self, commands: Dict[str, Iterable[str]]) -> Dict[str, Dict[str, Any]]:
        """
        Build a click default map restricted to the options each command has.

        Args:
            commands: Option names accepted by each command

        Returns:
            Mapping from command name to its defaults
        """

        return {
            name: {key: value for key, value in self.config.items() if key in params}
            for name, params in commands.items()
        }
