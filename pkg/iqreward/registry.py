"""Estimator registry: IQ estimator modes looked up by name.

Two ways to register estimators:
  1. Decorator: @register() on a BaseEstimator subclass (the built-in
     oracle / inprocess / service modes register themselves this way)
  2. Config: EstimatorRegistry.from_json("estimators.json") or from_dict(...)
     naming an importable module and class
"""

from __future__ import annotations

import importlib
import json
from pathlib import Path
from typing import TYPE_CHECKING, Any, Optional

if TYPE_CHECKING:
    from .estimator import BaseEstimator

# Module-level default registry
_default_registry: Optional["EstimatorRegistry"] = None


def _get_default_registry() -> "EstimatorRegistry":
    global _default_registry
    if _default_registry is None:
        _default_registry = EstimatorRegistry()
    return _default_registry


def register(registry: Optional["EstimatorRegistry"] = None):
    """Decorator to register a BaseEstimator subclass under its ``name``.

    Usage:
        @register()
        class MyEstimator(BaseEstimator):
            name = "mine"
            description = "Scores transcripts somehow"
            def estimate(self, dialogue, *, trouble=None, episode_id=None) -> int: ...
    """

    def decorator(cls: type["BaseEstimator"]) -> type["BaseEstimator"]:
        target = registry if registry is not None else _get_default_registry()
        target.add(cls)
        return cls

    return decorator


class EstimatorRegistry:
    """Estimator classes keyed by mode name; instances are built on demand."""

    def __init__(self) -> None:
        self._classes: dict[str, type[BaseEstimator]] = {}

    def add(self, cls: type["BaseEstimator"]) -> None:
        self._classes[cls.name] = cls

    def remove(self, name: str) -> None:
        self._classes.pop(name, None)

    def get(self, name: str) -> Optional[type["BaseEstimator"]]:
        return self._classes.get(name)

    def list_ids(self) -> list[str]:
        return list(self._classes.keys())

    def create(self, name: str, **kwargs: Any) -> "BaseEstimator":
        """Instantiate the estimator registered as ``name``.

        Raises KeyError if the name is not registered.
        """
        cls = self._classes.get(name)
        if cls is None:
            available = ", ".join(self._classes.keys())
            raise KeyError(f"Estimator '{name}' not found. Available: {available}")
        return cls(**kwargs)

    def __len__(self) -> int:
        return len(self._classes)

    def __contains__(self, name: str) -> bool:
        return name in self._classes

    @classmethod
    def from_json(cls, path: str | Path) -> "EstimatorRegistry":
        """Load a registry from a JSON config file.

        Expected format:
        {
          "estimators": [
            {"module": "mylab.estimators", "class": "SvmEstimator"}
          ]
        }
        """
        data = json.loads(Path(path).read_text())
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "EstimatorRegistry":
        """Import and register every class named in ``data["estimators"]``."""
        from .estimator import BaseEstimator

        registry = cls()
        for i, entry in enumerate(data.get("estimators", [])):
            module_path = entry.get("module", "")
            class_name = entry.get("class", "")
            if not module_path or not class_name:
                raise ValueError(f"estimators[{i}]: both 'module' and 'class' are required")
            klass = getattr(importlib.import_module(module_path), class_name)
            if not (isinstance(klass, type) and issubclass(klass, BaseEstimator)):
                raise ValueError(f"estimators[{i}]: {module_path}.{class_name} is not a BaseEstimator")
            registry.add(klass)
        return registry

    def to_dict(self) -> dict[str, Any]:
        return {
            "estimators": [
                {"name": name, "module": c.__module__, "class": c.__qualname__, "description": c.description}
                for name, c in self._classes.items()
            ]
        }

    def to_json(self, path: str | Path | None = None) -> str:
        """Export the registry as JSON. Optionally write to file."""
        data = json.dumps(self.to_dict(), indent=2)
        if path:
            Path(path).write_text(data)
        return data


def get_default_registry() -> EstimatorRegistry:
    """The module-level registry used by @register() and the CLI."""
    from . import estimator  # noqa: F401  (registers the built-in modes)

    return _get_default_registry()


def reset_default_registry() -> None:
    """Drop custom registrations; the built-in modes stay (useful for tests)."""
    global _default_registry
    from .estimator import InProcessEstimator, OracleEstimator, ServiceEstimator

    _default_registry = EstimatorRegistry()
    for cls in (OracleEstimator, InProcessEstimator, ServiceEstimator):
        _default_registry.add(cls)
