"""Configuration management of the semmap pipeline."""
import json
from copy import deepcopy
from pathlib import Path
from typing import Any, Optional
from jsonschema import validate, ValidationError

from .classRegistry import ROAD_SURFACE_IDS
from .geometry import CameraModel

DEFAULT_CONFIGURATION: dict[str, Any] = {
    'seed': 0,
    'threads': 1,
    'input': {
        'sceneConfig': '',
        'rounds': [],
        'poses': ''
    },
    'output': {
        'directory': 'semmapRun'
    },
    'stages': {
        'scene': True,
        'filterMoving': True,
        'render': True,
        'perturb': True,
        'rectify': True,
        'refine': True,
        'smooth': True,
        'fuse': True,
        'evaluate': True
    },
    'mapFilter': {
        'delta': 0.6,
        'epsD': 0.025
    },
    'splat': {
        'min': 0.025,
        'max': 0.05
    },
    'camera': {
        'fx': 500.0,
        'fy': 500.0,
        'cx': 304.0,
        'cy': 256.0,
        'width': 608,
        'height': 512
    },
    'roadPrior': {
        'resolution': 0.05,
        'classes': list(ROAD_SURFACE_IDS)
    },
    'noise': {
        'transMax': 7.5,
        'rotMax': 15.0
    },
    'refine': {
        'weights': '',
        'maxIterations': 100,
        'patience': 8,
        'starts': 5,
        'maxPoints': 2000,
        'lossWidth': 304,
        'lossHeight': 256
    },
    'kalman': {
        'dt': 0.1,
        'processNoise': 0.1,
        'measurementNoise': None
    },
    'fusion': {
        'threshold': 0.9
    }
}

ALLOWED_SECTIONS = tuple(DEFAULT_CONFIGURATION)
SNAPSHOT_NAME = 'resolvedConfig.json'
RUNTIME_KEYS = ('threads',)  # execution settings that never change an artifact


class ConfigurationError(ValueError):
    """Invalid pipeline configuration."""


def mergeConfig(base: dict[str, Any], updates: dict[str, Any]) -> dict[str, Any]:
    """Recursive merge; dict values are merged key by key, everything else is replaced."""
    result = deepcopy(base)
    for key, value in updates.items():
        if isinstance(value, dict) and isinstance(result.get(key), dict):
            result[key] = mergeConfig(result[key], value)
        else:
            result[key] = deepcopy(value)
    return result


class ConfigurationManager:
    """Handles configuration loading, validation, and management."""

    def __init__(self, configFile: Optional[Path] = None, overrides: Optional[dict[str, Any]] = None) -> None:
        """Initialize the configuration manager.

        Args:
            configFile: JSON file merged over the defaults. If None, the defaults are used.
            overrides: values merged last, e.g. from command-line flags
        """
        self.configFile = configFile
        self._config: dict[str, Any] = deepcopy(DEFAULT_CONFIGURATION)
        self.loadConfig()
        if overrides:
            self.updateConfig(overrides)

    def loadConfig(self) -> None:
        """Load configuration from file and merge it over the defaults."""
        self._config = deepcopy(DEFAULT_CONFIGURATION)
        if self.configFile is not None:
            try:
                with open(self.configFile, encoding='utf-8') as confFile:
                    loaded = json.load(confFile)
            except (json.JSONDecodeError, OSError) as e:
                raise ConfigurationError(f"Error loading configuration file: {e}") from e
            if not isinstance(loaded, dict):
                raise ConfigurationError('Configuration file must hold a JSON object')
            self._config = mergeConfig(self._config, loaded)
        self.validateConfig()

    def validateConfig(self) -> None:
        """Validate configuration format, value ranges and cross-field constraints."""
        schemaPath = Path(__file__).parent / 'pipelineSchema.json'
        with open(schemaPath, encoding='utf-8') as schemaFile:
            schema = json.load(schemaFile)
        try:
            validate(instance=self._config, schema=schema)
        except ValidationError as e:
            path = '/'.join(map(str, e.path)) if e.path else '<root>'
            raise ConfigurationError(f"Configuration validation error at {path}: {e.message}") from e
        splat = self._config['splat']
        if splat['min'] > splat['max']:
            raise ConfigurationError(
                f"Configuration validation error at splat: min {splat['min']} > max {splat['max']}")
        try:
            self.camera()
        except ValueError as e:
            raise ConfigurationError(f"Configuration validation error at camera: {e}") from e

    def get(self, info: str) -> Any:
        """Get a copy of a configuration section by key"""
        if info not in ALLOWED_SECTIONS:
            raise ValueError(f"Invalid info type '{info}' requested")
        return deepcopy(self._config[info])

    def camera(self) -> CameraModel:
        """Camera model of the configuration."""
        cam = self._config['camera']
        return CameraModel(float(cam['fx']), float(cam['fy']), float(cam['cx']), float(cam['cy']), int(cam['width']),
                           int(cam['height']))

    def stageEnabled(self, stage: str) -> bool:
        """True if a pipeline stage is switched on."""
        return bool(self._config['stages'][stage])

    def asDict(self) -> dict[str, Any]:
        """Deep copy of the resolved configuration."""
        return deepcopy(self._config)

    def saveConfig(self, path: Path, content: Optional[dict[str, Any]] = None) -> None:
        """Save current configuration, or the given content, to file."""
        try:
            with open(path, 'w', encoding='utf-8') as confFile:
                json.dump(self._config if content is None else content, confFile, indent=2, sort_keys=True)
                confFile.write('\n')
        except OSError as e:
            raise ValueError(f"Error saving configuration file: {e}") from e

    def saveSnapshot(self, directory: Path) -> Path:
        """Write the resolved configuration beside the outputs, without the RUNTIME_KEYS."""
        path = Path(directory) / SNAPSHOT_NAME
        self.saveConfig(path, {key: value for key, value in self._config.items() if key not in RUNTIME_KEYS})
        return path

    def updateConfig(self, updates: dict[str, Any]) -> None:
        """Update configuration with new values."""
        previous = self._config
        self._config = mergeConfig(self._config, updates)
        try:
            self.validateConfig()
        except ConfigurationError:
            self._config = previous
            raise
