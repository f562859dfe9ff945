"""Experiment configuration schema (JSON files, schema version 1.0)."""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path
from typing import Annotated, Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .baselines import SdConfig, sc_sample_size, sd_min_samples
from .experiments import DubinsSetup, LinearSetup, PendulumSetup

SCHEMA_VERSION = "1.0"

DEFAULT_DISTANCE = {"pendulum": "final_state_l1", "dubins": "traj_l2_avg", "linear": "final_state_l1"}
CONTROLLERS = {"pendulum": "ilqr", "dubins": "lqr", "linear": "linear_feedback"}
SETUPS = {"pendulum": PendulumSetup, "dubins": DubinsSetup, "linear": LinearSetup}


class ConfigError(ValueError):
    """Every problem found in a config, not just the first."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid experiment config:\n" + "\n".join(f"  - {p}" for p in problems))


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ControllerConfig(_Strict):
    name: Literal["ilqr", "lqr", "linear_feedback"] | None = None
    q_diag: list[float] | None = None
    r_diag: list[float] | None = None
    qf_scale: float | None = Field(default=None, gt=0)


class ScConfig(_Strict):
    epsilon: float = Field(default=0.1, gt=0, lt=1)
    confidence_beta: float = Field(default=0.05, gt=0, lt=1)


class SdSection(_Strict):
    discard_k: int = Field(default=5, ge=0)
    epsilon: float = Field(default=0.1, gt=0, lt=1)
    confidence_beta: float = Field(default=0.05, gt=0, lt=1)

    def to_sd(self) -> SdConfig:
        return SdConfig(self.discard_k, self.epsilon, self.confidence_beta)


class BoConfig(_Strict):
    ucb_beta: float = Field(default=2.0, gt=0)
    acq_restarts: int | None = Field(default=None, ge=1)
    acq_candidates: int = Field(default=1000, ge=1)
    acq_local_steps: int = Field(default=60, ge=0)
    refit_every: int = Field(default=1, ge=1)
    hyper_restarts: int = Field(default=3, ge=1)
    lengthscale_bounds: tuple[float, float] = (0.01, 0.5)
    signal_variance_bounds: tuple[float, float] = (0.01, 10.0)
    noise_variance_bounds: tuple[float, float] = (1e-8, 1e-4)


class SweepConfig(_Strict):
    dims: list[int] = [1, 2, 3]
    methods: list[Literal["custom", "sc", "sd"]] = ["custom", "sc", "sd"]
    trials: int = Field(default=10, ge=1)
    tolerance: float = Field(default=0.05, gt=0, lt=1)
    custom_cap: int = Field(default=150, ge=1)
    random_cap: int = Field(default=3000, ge=1)


class VariantConfig(_Strict):
    grid: int = Field(default=51, ge=2)
    knot_random: int = Field(default=50, ge=1)
    knot_starts: int = Field(default=3, ge=1)
    knot_local_steps: int = Field(default=30, ge=0)


class ExperimentConfig(_Strict):
    schema_version: Literal["1.0"] = SCHEMA_VERSION
    task: Literal["pendulum", "dubins", "linear"]
    state_dim: int = Field(default=1, ge=1)
    family: dict[str, Any] = {}
    method: Literal["custom", "sc", "sd", "variant-sweep"] = "custom"
    budget: Annotated[int, Field(ge=1)] | Literal["auto"] = 30
    baseline_budget: int | None = Field(default=None, ge=1)
    n_init: int = Field(default=5, ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    distance: Literal["final_state_l1", "traj_linf", "traj_l2_avg", "task_performance_l1"] | None = None
    distance_mask: list[int] | None = None
    controller: ControllerConfig = ControllerConfig()
    sc: ScConfig = ScConfig()
    sd: SdSection = SdSection()
    bo: BoConfig = BoConfig()
    threshold: float | None = None
    bound_C: float = Field(default=1.0, gt=0)
    bound_epsilon: float = Field(default=0.05, gt=0, lt=1)
    oracle_resolution: int = Field(default=201, ge=1)
    oracle_cap: int = Field(default=1_000_000, ge=1)
    sweep: SweepConfig = SweepConfig()
    variants: VariantConfig = VariantConfig()
    output_dir: str = "results"

    def semantic_problems(self) -> list[str]:
        problems = []
        setup_fields = {f.name for f in dataclasses.fields(SETUPS[self.task])}
        for key in self.family:
            if key not in setup_fields:
                problems.append(f"family.{key}: unknown option for task {self.task!r} "
                                f"(known: {', '.join(sorted(setup_fields))})")
        if self.controller.name and self.controller.name != CONTROLLERS[self.task]:
            problems.append(f"controller.name: task {self.task!r} uses {CONTROLLERS[self.task]!r}, "
                            f"got {self.controller.name!r}")
        if self.task == "linear" and any(
                v is not None for v in (self.controller.q_diag, self.controller.r_diag, self.controller.qf_scale)):
            problems.append("controller: linear tasks use a fixed random feedback gain; cost weights do not apply")
        if self.budget == "auto" and self.method not in ("sc", "sd"):
            problems.append("budget: 'auto' is only defined for methods sc and sd")
        if isinstance(self.budget, int) and self.method == "sd" and self.budget <= self.sd.discard_k:
            problems.append(f"budget: sd needs more than discard_k={self.sd.discard_k} samples")
        if self.method == "variant-sweep" and self.task != "pendulum":
            problems.append("method: variant-sweep is implemented for the pendulum task only")
        for name in ("lengthscale_bounds", "signal_variance_bounds", "noise_variance_bounds"):
            lo, hi = getattr(self.bo, name)
            if not 0 < lo < hi:
                problems.append(f"bo.{name}: need 0 < low < high, got ({lo}, {hi})")
        return problems

    def resolved_budget(self) -> int:
        if self.budget != "auto":
            return int(self.budget)
        if self.method == "sc":
            return sc_sample_size(self.sc.epsilon, self.sc.confidence_beta)
        return sd_min_samples(self.sd.to_sd())

    def setup(self):
        kwargs = dict(self.family)
        if self.task == "linear":
            kwargs.setdefault("state_dim", self.state_dim)
        ctrl = self.controller
        if ctrl.q_diag is not None:
            kwargs["q_diag"] = tuple(ctrl.q_diag)
        if ctrl.r_diag is not None:
            if self.task == "pendulum":
                kwargs["r"] = ctrl.r_diag[0]
            else:
                kwargs["r_diag"] = tuple(ctrl.r_diag)
        if ctrl.qf_scale is not None:
            kwargs["qf_scale"] = ctrl.qf_scale
        for k, v in kwargs.items():
            if isinstance(v, list):
                kwargs[k] = tuple(v)
        return SETUPS[self.task](**kwargs)

    @property
    def distance_name(self) -> str:
        return self.distance or DEFAULT_DISTANCE[self.task]


def parse_config(data: dict) -> ExperimentConfig:
    """Validate a config dict, reporting every problem at once.

    Schema errors are collected first; the semantic checks then run on the
    config with the offending keys reset to defaults, so they are reported
    alongside instead of being masked.
    """
    problems = []
    try:
        cfg = ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        bad = set()
        for e in exc.errors():
            problems.append(f"{'.'.join(str(x) for x in e['loc']) or '<root>'}: {e['msg']}")
            if e["loc"]:
                bad.add(e["loc"][0])
        try:
            cfg = ExperimentConfig.model_validate({k: v for k, v in data.items() if k not in bad})
        except (ValidationError, AttributeError):
            raise ConfigError(problems) from None
    problems += cfg.semantic_problems()
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(json.load(fh))
