"""Experiment configuration: JSON schema validation and object builders.

Validation errors carry the offending field path (dotted), which the CLI
reports with exit code 2.  Everything downstream of a validated config is
deterministic given the recorded seed.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .coefficients import CoefficientSet, make_preset, PRESET_NAMES
from .geometry import Domain
from .singular import make_dirichlet_datum
from .testfuncs import HatTimeTestFn, SmoothBumpTestFn


class ConfigError(ValueError):
    def __init__(self, field_path: str, message: str):
        super().__init__(f"config.{field_path}: {message}")
        self.field_path = field_path


def load_json(path: str | Path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError("<file>", f"not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON in {path}: {exc}")


def _get(cfg: dict, path: str, kind=None, required: bool = True, default=None):
    node = cfg
    walked = []
    for part in path.split("."):
        walked.append(part)
        if not isinstance(node, dict) or part not in node:
            if required:
                raise ConfigError(".".join(walked), "missing required field")
            return default
        node = node[part]
    if kind is not None and not isinstance(node, kind):
        names = kind.__name__ if not isinstance(kind, tuple) else "/".join(k.__name__ for k in kind)
        raise ConfigError(path, f"expected {names}, got {type(node).__name__}")
    return node


def domain_from_config(cfg: dict) -> Domain:
    dim = _get(cfg, "domain.dim", int, required=False, default=2)
    xbar = _get(cfg, "domain.xbar", list, required=False, default=[0.5] * (dim - 1) + [0.0])
    eps0 = _get(cfg, "domain.eps0", (int, float))
    T = _get(cfg, "domain.T", (int, float), required=False, default=1.0)
    bc = _get(cfg, "domain.bc_labels", dict, required=False, default={})
    try:
        return Domain(dim=dim, xbar=tuple(float(v) for v in xbar), eps0=float(eps0), T=float(T), bc_labels=bc)
    except ValueError as exc:
        raise ConfigError("domain", str(exc))


def n_cells_from_config(cfg: dict, default: int | None = None) -> int:
    val = _get(cfg, "domain.n_cells", int, required=default is None, default=default)
    if val is None:
        raise ConfigError("domain.n_cells", "missing required field")
    if val < 1:
        raise ConfigError("domain.n_cells", "must be positive")
    return val


def coefficients_from_config(cfg: dict, path: str) -> CoefficientSet:
    block = _get(cfg, path, dict)
    preset = block.get("preset")
    if preset is None:
        raise ConfigError(f"{path}.preset", "missing required field")
    if preset not in PRESET_NAMES:
        raise ConfigError(f"{path}.preset", f"unknown preset {preset!r} (choose from {PRESET_NAMES})")
    params = block.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError(f"{path}.params", "expected an object")
    try:
        return make_preset(preset, **{k: _listify(v) for k, v in params.items()})
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"{path}.params", str(exc))


def _listify(v):
    return tuple(v) if isinstance(v, list) else v


def datum_from_config(cfg: dict, path: str, domain: Domain):
    """Boundary datum: constant, affine in x, or the localized bump family."""
    block = _get(cfg, path, (dict, int, float))
    if isinstance(block, (int, float)):
        return float(block)
    kind = block.get("kind")
    if kind == "constant":
        return float(_get(block, "value", (int, float)))
    if kind == "affine":
        coeffs = _get(block, "coeffs", list)
        c = [float(v) for v in coeffs] + [0.0] * (3 - len(coeffs))

        def g(x, t, c=c):
            x = np.atleast_2d(x)
            return c[0] + c[1] * x[:, 0] + c[2] * x[:, 1]

        return g
    if kind == "localized":
        eps = float(_get(block, "eps", (int, float)))
        g1 = float(_get(block, "g1", (int, float)))
        g2 = float(_get(block, "g2", (int, float)))
        window = _get(block, "window", list)
        try:
            return make_dirichlet_datum(domain, eps, g1, g2, (float(window[0]), float(window[1])))
        except ValueError as exc:
            raise ConfigError(path, str(exc))
    raise ConfigError(f"{path}.kind", "expected one of constant/affine/localized")


def battery_from_config(block: dict, domain: Domain) -> list:
    members = _get(block, "members", list)
    out = []
    for i, m in enumerate(members):
        if not isinstance(m, dict):
            raise ConfigError(f"members[{i}]", "expected an object")
        kind = m.get("kind", "hat")
        try:
            args = (
                float(m["center"]),
                float(m["width"]),
                float(m.get("depth", 0.25)),
                (float(m["window"][0]), float(m["window"][1])),
            )
        except (KeyError, TypeError, IndexError) as exc:
            raise ConfigError(f"members[{i}]", f"bad member: {exc}")
        out.append(SmoothBumpTestFn(*args) if kind == "smooth" else HatTimeTestFn(*args))
    if not out:
        raise ConfigError("members", "battery must not be empty")
    return out


def seed_from_config(cfg: dict, override: int | None = None) -> int:
    if override is not None:
        return int(override)
    return int(_get(cfg, "seed", int, required=False, default=0))


def tolerance_from_config(cfg: dict) -> float:
    return float(
        _get(cfg, "tolerances.nonlinear", (int, float), required=False, default=1e-10)
    )
