"""Experiment configuration: TOML or JSON in, schema-checked dataclass out.

Validation is strict: unknown keys are rejected and every numeric field is
range-checked, with the offending field path in the error message.  The
config hash covers the semantic fields only (not output paths or the
parallelism degree), and pins what a byte-identical rerun means.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

KINDS = (
    "classify", "kcm", "cp", "bp", "ca-death", "lpp", "monotone-set", "orange",
    "grand-coupling", "mixing-scaling", "survival", "renorm-check",
    "passage-times", "warmup", "cluster-tail", "chain-props",
)


class ConfigError(ValueError):
    pass


def _want(kind, key, value, typ, lo=None, hi=None):
    if not isinstance(value, typ) or isinstance(value, bool) and typ is not bool:
        raise ConfigError(f"{kind}.{key}: expected {typ}, got {type(value).__name__}")
    if lo is not None and value < lo:
        raise ConfigError(f"{kind}.{key}: {value} below minimum {lo}")
    if hi is not None and value > hi:
        raise ConfigError(f"{kind}.{key}: {value} above maximum {hi}")
    return value


_NUM = (int, float)

# key -> (type, lo, hi); None bounds mean unconstrained
_COMMON = {
    "kind": (str, None, None),
    "seed": (int, 0, None),
    "jobs": (int, 0, None),
    "out": (str, None, None),
    "family": ((str, dict), None, None),
    "dim": (int, 1, 4),
}

_PER_KIND = {
    "classify": {"expect": ((str, list), None, None)},
    "kcm": {"n": (int, 1, None), "q": (_NUM, 0.0, 1.0), "horizon": (_NUM, 0.0, None),
            "init": ((str, float), None, None), "boundary": (str, None, None),
            "record_frames": (list, None, None)},
    "cp": {"n": (int, 1, None), "q0": (_NUM, 0.0, 1.0), "horizon": (_NUM, 0.0, None),
           "init": ((str, float), None, None), "boundary": (str, None, None),
           "record_frames": (list, None, None)},
    "bp": {"n": (int, 1, None), "steps": (int, 0, None), "init": ((str, float, list), None, None),
           "boundary": (str, None, None)},
    "ca-death": {"n": (int, 1, None), "death_delta": (_NUM, 0.0, 1.0), "steps": (int, 0, None),
                 "init": ((str, float), None, None), "burn_in": (int, 0, None)},
    "lpp": {"ns": (list, None, None), "seeds": (int, 1, None), "rule": (list, None, None),
            "ratio_window": (list, None, None)},
    "monotone-set": {"ell": (int, 1, None), "seeds": (int, 1, None)},
    "orange": {"n": (int, 1, None), "q0": (_NUM, 0.0, 1.0), "p_init": (_NUM, 0.0, 1.0),
               "horizon": (_NUM, 0.0, None), "inject_fault": (str, None, None)},
    "grand-coupling": {"n": (int, 1, None), "q": (_NUM, 0.0, 1.0), "q0": (_NUM, 0.0, 1.0),
                       "p_init": (_NUM, 0.0, 1.0), "n_dominated": (int, 0, None),
                       "horizon": (_NUM, 0.0, None), "seeds": (int, 1, None),
                       "inject_fault": (str, None, None)},
    "mixing-scaling": {"ns": (list, None, None), "q": (_NUM, 0.0, 1.0), "q0": (_NUM, 0.0, 1.0),
                       "mix_delta": (_NUM, 0.0, 1.0), "replicas": (int, 1, None),
                       "ratio_window": (list, None, None)},
    "survival": {"q": (_NUM, 0.0, 1.0), "q0": (_NUM, 0.0, 1.0), "p_init": (_NUM, 0.0, 1.0),
                 "horizon": (_NUM, 0.0, None), "replicas": (int, 1, None),
                 "halfwidth": (int, 1, None), "burn_in": (_NUM, 0.0, None),
                 "validate_buffer": (int, 0, None), "min_r2": (_NUM, 0.0, 1.0)},
    "renorm-check": {"n": (int, 1, None), "q0": (_NUM, 0.0, 1.0), "tau_max": (int, 1, None),
                     "R": (int, 1, None), "T": (_NUM, 0.0, None), "dirs": (list, None, None),
                     "seeds": (int, 1, None), "init": ((str, float), None, None)},
    "passage-times": {"n": (int, 1, None), "q0": (_NUM, 0.0, 1.0), "R": (int, 1, None),
                      "T": (_NUM, 0.0, None), "dirs": (list, None, None), "seeds": (int, 1, None)},
    "warmup": {"q": (_NUM, 0.0, 1.0), "p": (_NUM, 0.0, 1.0), "R": (int, 1, None),
               "T_list": (list, None, None), "boxes_per_side": (int, 1, None),
               "replicas": (int, 1, None), "margin": (int, 0, None)},
    "cluster-tail": {"mode": (str, None, None), "n": (int, 1, None), "death_delta": (_NUM, 0.0, 1.0),
                     "steps": (int, 0, None), "burn_in": (int, 0, None), "k_sq": (int, 1, None),
                     "ell_grid": (list, None, None), "p": (_NUM, 0.0, 1.0), "seeds": (int, 1, None),
                     "min_r2": (_NUM, 0.0, 1.0)},
    "chain-props": {"instances": (int, 1, None), "k_sq": (int, 1, None),
                    "max_path": (int, 2, None)},
}


@dataclass
class ExperimentConfig:
    kind: str
    seed: int
    jobs: int
    out: str | None
    params: dict = field(default_factory=dict)

    def hash(self) -> str:
        body = {"kind": self.kind, "seed": self.seed, **self.params}
        canon = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


def validate_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a table/object")
    kind = raw.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"kind: expected one of {KINDS}, got {kind!r}")
    allowed = dict(_COMMON)
    allowed.update(_PER_KIND[kind])
    params = {}
    for key, value in raw.items():
        if key not in allowed:
            raise ConfigError(f"{kind}.{key}: unknown key")
        typ, lo, hi = allowed[key]
        _want(kind, key, value, typ, lo, hi)
        if key not in ("kind", "seed", "jobs", "out"):
            params[key] = value
    return ExperimentConfig(
        kind=kind,
        seed=int(raw.get("seed", 0)),
        jobs=int(raw.get("jobs", 0)),
        out=raw.get("out"),
        params=params,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    text = path.read_bytes()
    if path.suffix == ".json":
        raw = json.loads(text)
    else:
        raw = tomllib.loads(text.decode())
    return validate_config(raw)
