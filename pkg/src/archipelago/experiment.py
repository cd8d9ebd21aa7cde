"""JSON experiment descriptions and named test functions.

An experiment file looks like::

    {
      "model": {"type": "finite", "chi": [...], "M": [...], "g": [...]},
      "chain": {"m1": 16, "m2": 16, "tau": 1.0, "steps": 5, "seed": 7},
      "test_functions": {"state1": {"type": "indicator", "state": 1}},
      "replicates": 200,
      "output": "out",
      "oracle": {"tau": 1.0},
      "validate": {"schemes": ["b2", "sisr", "basil"]},
      "deviation": {"m2_grid": [32, 64, 128], "epsilon": 0.1}
    }

``model`` may be replaced by ``"model_file"``, a path relative to the
experiment file. Only ``model`` and ``chain`` are mandatory.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .algorithms import ChainConfig
from .errors import ConfigurationError
from .feynman_kac import FiniteFK, model_from_dict
from .oracle import SCHEMES

_TOP_LEVEL = {
    "model", "model_file", "chain", "test_functions", "replicates", "output",
    "oracle", "validate", "deviation",
}


def indicator(k):
    def h(x):
        return (np.asarray(x) == k).astype(float)

    h.__name__ = f"indicator_{k}"
    return h


def coordinate(index=None):
    """The state itself, or one coordinate of a vector state."""
    def h(x):
        x = np.asarray(x, dtype=float)
        return x if index is None else x[..., index]

    return h


def table(values):
    """Function on ``{0, ..., d-1}`` given by its value vector."""
    values = np.asarray(values, dtype=float)

    def h(x):
        return values[np.asarray(x, dtype=int)]

    return h


def resolve_test_function(spec, model):
    """Resolve a test-function description against the state space of ``model``."""
    if not isinstance(spec, dict) or "type" not in spec:
        raise ConfigurationError(f"test function must be an object with a 'type': {spec!r}")
    kind = spec["type"]
    finite = isinstance(model, FiniteFK)
    if kind == "indicator":
        if not finite:
            raise ConfigurationError("indicator test functions need a finite model")
        k = spec.get("state")
        if not isinstance(k, int) or not 0 <= k < model.d:
            raise ConfigurationError(f"indicator state must be an integer in [0, {model.d})")
        return indicator(k)
    if kind == "coordinate":
        # both built-in models have scalar states
        if spec.get("index") not in (None, 0):
            raise ConfigurationError("scalar state spaces only have coordinate 0")
        return coordinate()
    if kind == "table":
        if not finite:
            raise ConfigurationError("table test functions need a finite model")
        values = spec.get("values")
        try:
            arr = np.asarray(values, dtype=float)
        except (TypeError, ValueError):
            raise ConfigurationError("table values must be numbers") from None
        if arr.shape != (model.d,) or not np.all(np.isfinite(arr)):
            raise ConfigurationError(f"table needs {model.d} finite values")
        return table(arr)
    raise ConfigurationError(f"unknown test function type {kind!r}")


def value_vector(h, model):
    """Values of ``h`` on a finite state space."""
    return np.asarray(h(np.arange(model.d)), dtype=float)


@dataclass
class ExperimentConfig:
    model: object
    model_spec: dict
    chain: ChainConfig
    test_functions: dict
    test_function_specs: dict
    replicates: int = 100
    output: Optional[str] = None
    oracle: dict = field(default_factory=dict)
    validate: dict = field(default_factory=dict)
    deviation: dict = field(default_factory=dict)
    source: Optional[str] = None

    def to_dict(self):
        """Resolved configuration, suitable for echoing into summaries."""
        return {
            "model": self.model_spec,
            "chain": self.chain.to_dict(),
            "test_functions": self.test_function_specs,
            "replicates": self.replicates,
            "output": self.output,
            "oracle": self.oracle,
            "validate": self.validate,
            "deviation": self.deviation,
        }

    def with_seed(self, seed):
        self.chain = self.chain.replace(seed=seed)
        return self

    @property
    def first_function(self):
        name = next(iter(self.test_functions))
        return name, self.test_functions[name]


def _section(data, key):
    value = data.get(key, {})
    if not isinstance(value, dict):
        raise ConfigurationError(f"'{key}' must be an object")
    return value


def _default_functions(model):
    if isinstance(model, FiniteFK):
        return {"state1": {"type": "indicator", "state": min(1, model.d - 1)}}
    return {"x": {"type": "coordinate"}}


def parse_experiment(data, base_dir=None):
    """Validate a decoded experiment description and build the objects it names."""
    if not isinstance(data, dict):
        raise ConfigurationError("experiment must be a JSON object")
    unknown = set(data) - _TOP_LEVEL
    if unknown:
        raise ConfigurationError(f"unknown experiment fields: {sorted(unknown)}")
    if ("model" in data) == ("model_file" in data):
        raise ConfigurationError("give exactly one of 'model' and 'model_file'")
    if "model_file" in data:
        path = Path(data["model_file"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        if not path.is_file():
            raise ConfigurationError(f"model file not found: {path}")
        model_spec = _read_json(path)
    else:
        model_spec = data["model"]
    model = model_from_dict(model_spec)

    if "chain" not in data or not isinstance(data["chain"], dict):
        raise ConfigurationError("'chain' object is required")
    chain = ChainConfig.from_dict(data["chain"])
    model.check_horizon(chain.steps)

    specs = data.get("test_functions") or _default_functions(model)
    if not isinstance(specs, dict):
        raise ConfigurationError("'test_functions' must map names to descriptions")
    fns = {}
    for name, spec in specs.items():
        if not isinstance(name, str) or not name.replace("_", "").isalnum():
            raise ConfigurationError(f"test function name {name!r} must be alphanumeric")
        fns[name] = resolve_test_function(spec, model)

    replicates = data.get("replicates", 100)
    if isinstance(replicates, bool) or not isinstance(replicates, int) or replicates < 0:
        raise ConfigurationError("'replicates' must be a nonnegative integer")
    output = data.get("output")
    if output is not None and not isinstance(output, str):
        raise ConfigurationError("'output' must be a path string")

    oracle = _section(data, "oracle")
    validate = _section(data, "validate")
    for scheme in validate.get("schemes", []):
        if scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {scheme!r}")
    deviation = _section(data, "deviation")
    if "function" in deviation and deviation["function"] not in fns:
        raise ConfigurationError(f"deviation function {deviation['function']!r} is not defined")
    eps = deviation.get("epsilon", 0.1)
    if not isinstance(eps, (int, float)) or not eps > 0 or math.isinf(eps):
        raise ConfigurationError("deviation epsilon must be a positive number")

    return ExperimentConfig(
        model, model_spec, chain, fns, dict(specs), replicates, output,
        oracle, validate, deviation,
    )


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path} is not valid JSON: {exc}") from None


def load_experiment(path):
    """Read and validate an experiment file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    config = parse_experiment(_read_json(path), base_dir=path.parent)
    config.source = str(path)
    return config
