"""Experiment configuration: strict JSON schema with exact round-tripping.

Unknown fields anywhere in the document are errors, never silently ignored.
Paths may use the form "bundled:<name>" to refer to the spec files shipped
inside the package.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

_SPEC_DIR = Path(__file__).parent / "specs"


def bundled_spec_path(name: str) -> Path:
    p = _SPEC_DIR / f"{name}.json"
    if not p.exists():
        raise ConfigError(f"no bundled spec named {name!r}; have "
                          f"{sorted(q.stem for q in _SPEC_DIR.glob('*.json'))}")
    return p


def resolve_path(path: str, base_dir: Path | None = None) -> Path:
    if path.startswith("bundled:"):
        return bundled_spec_path(path.split(":", 1)[1])
    p = Path(path)
    if not p.is_absolute() and base_dir is not None:
        p = base_dir / p
    return p


def _take(doc: dict, context: str, **fields):
    """Pop known fields with defaults; error on leftovers."""
    out = {}
    doc = dict(doc)
    for name, default in fields.items():
        out[name] = doc.pop(name, default)
    if doc:
        raise ConfigError(f"unknown fields in {context}: {sorted(doc)}")
    return out


@dataclass(frozen=True)
class InitSection:
    c_law: str = "uniform"
    b: float = 1.0
    w_law: str = "normal"
    b_w: float = 1.0

    @classmethod
    def from_dict(cls, doc):
        return cls(**_take(doc, "init", c_law="uniform", b=1.0, w_law="normal", b_w=1.0))

    def to_dict(self):
        return {"c_law": self.c_law, "b": self.b, "w_law": self.w_law, "b_w": self.b_w}


@dataclass(frozen=True)
class OdeSection:
    dt: float = 0.01
    t_end: float | None = None   # None: t_train (compare) or 50/eig_min (regression)
    h0_seed: int = 0
    identity_a: bool = False

    @classmethod
    def from_dict(cls, doc):
        return cls(**_take(doc, "ode", dt=0.01, t_end=None, h0_seed=0, identity_a=False))

    def to_dict(self):
        return {"dt": self.dt, "t_end": self.t_end, "h0_seed": self.h0_seed,
                "identity_a": self.identity_a}


@dataclass(frozen=True)
class AEstimateSection:
    method: str = "montecarlo"
    samples: int = 1_000_000
    seed: int = 0
    chunk_size: int = 65536
    quad_nodes: int = 201

    @classmethod
    def from_dict(cls, doc):
        return cls(**_take(doc, "a_estimate", method="montecarlo", samples=1_000_000,
                           seed=0, chunk_size=65536, quad_nodes=201))

    def to_dict(self):
        return {"method": self.method, "samples": self.samples, "seed": self.seed,
                "chunk_size": self.chunk_size, "quad_nodes": self.quad_nodes}


@dataclass(frozen=True)
class Thresholds:
    """Pass/fail gates; null disables a gate (exploratory runs)."""

    pd_ratio: float | None = None
    final_sup_tol: float | None = None
    lyapunov_slack: float | None = None
    distance_band: tuple[float, float] | None = None
    invariance_band: tuple[float, float] | None = None
    regression_sup_tol: float | None = None
    regression_rate_frac: float | None = None
    sgd_loss_tol: float | None = None

    @classmethod
    def from_dict(cls, doc):
        vals = _take(doc, "thresholds", pd_ratio=None, final_sup_tol=None,
                     lyapunov_slack=None, distance_band=None, invariance_band=None,
                     regression_sup_tol=None, regression_rate_frac=None,
                     sgd_loss_tol=None)
        for band in ("distance_band", "invariance_band"):
            if vals[band] is not None:
                vals[band] = tuple(float(x) for x in vals[band])
                if len(vals[band]) != 2:
                    raise ConfigError(f"{band} must be [lo, hi]")
        return cls(**vals)

    def to_dict(self):
        def enc(v):
            return list(v) if isinstance(v, tuple) else v

        return {k: enc(getattr(self, k)) for k in (
            "pd_ratio", "final_sup_tol", "lyapunov_slack", "distance_band",
            "invariance_band", "regression_sup_tol", "regression_rate_frac",
            "sgd_loss_tol")}


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    mode: str
    output_dir: str
    mdp_path: str | None = None
    dataset_path: str | None = None
    gamma: float | None = None
    activation: str = "tanh"
    init: InitSection = field(default_factory=InitSection)
    alpha: float = 1.0
    n_list: tuple[int, ...] = (1000,)
    seeds: tuple[int, ...] = (0,)
    t_train: float = 1.0
    snapshot_stride: int | None = None
    burn_in: int = 0
    ode: OdeSection = field(default_factory=OdeSection)
    a_estimate: AEstimateSection = field(default_factory=AEstimateSection)
    bellman_tol: float = 1e-12
    thresholds: Thresholds = field(default_factory=Thresholds)

    def __post_init__(self):
        if self.mode not in ("infinite", "finite", "regression"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.mode == "regression":
            if self.dataset_path is None:
                raise ConfigError("regression config needs dataset_path")
        elif self.mdp_path is None:
            raise ConfigError(f"{self.mode} config needs mdp_path")
        if len(self.n_list) == 0 or list(self.n_list) != sorted(self.n_list):
            raise ConfigError("n_list must be nonempty and ascending")
        if len(self.seeds) == 0:
            raise ConfigError("seeds must be nonempty")

    @classmethod
    def from_dict(cls, doc):
        vals = _take(doc, "config", name=None, mode=None, output_dir=None,
                     mdp_path=None, dataset_path=None, gamma=None, activation="tanh",
                     init={}, alpha=1.0, n_list=[1000], seeds=[0], t_train=1.0,
                     snapshot_stride=None, burn_in=0, ode={}, a_estimate={},
                     bellman_tol=1e-12, thresholds={})
        for req in ("name", "mode", "output_dir"):
            if vals[req] is None:
                raise ConfigError(f"config missing required field {req!r}")
        vals["init"] = InitSection.from_dict(vals["init"])
        vals["ode"] = OdeSection.from_dict(vals["ode"])
        vals["a_estimate"] = AEstimateSection.from_dict(vals["a_estimate"])
        vals["thresholds"] = Thresholds.from_dict(vals["thresholds"])
        vals["n_list"] = tuple(int(n) for n in vals["n_list"])
        vals["seeds"] = tuple(int(s) for s in vals["seeds"])
        return cls(**vals)

    def to_dict(self):
        return {
            "name": self.name,
            "mode": self.mode,
            "output_dir": self.output_dir,
            "mdp_path": self.mdp_path,
            "dataset_path": self.dataset_path,
            "gamma": self.gamma,
            "activation": self.activation,
            "init": self.init.to_dict(),
            "alpha": self.alpha,
            "n_list": list(self.n_list),
            "seeds": list(self.seeds),
            "t_train": self.t_train,
            "snapshot_stride": self.snapshot_stride,
            "burn_in": self.burn_in,
            "ode": self.ode.to_dict(),
            "a_estimate": self.a_estimate.to_dict(),
            "bellman_tol": self.bellman_tol,
            "thresholds": self.thresholds.to_dict(),
        }


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return ExperimentConfig.from_dict(json.load(fh))


def save_config(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n", encoding="utf-8")
