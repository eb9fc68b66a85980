"""Adapting independently trained options so they execute in sequence.

Origin: retrain the successor from states the predecessor actually reaches.
RM-Centroid / RM-Density: retrain the predecessor to finish at a chosen
sample of the successor's origin set.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from optseq.env import SurrogateEnv
from optseq.errors import ConfigurationError, EmptyResultError, PreconditionError
from optseq.geometry import Pose
from optseq.harness import check_chain
from optseq.learner import HandoffSource, TrainConfig, TrainedOption, train_option
from optseq.options import OptionSpec, connected
from optseq.samples import SampleSet
from optseq.scenario import AnalysisConfig
from optseq.sets import (OverlapReport, closest_to_centroid_index, densest_sample_index, overlap,
                         sample_origin_set, sample_result_set)


class AdaptationMethod(enum.Enum):
    ORIGIN = "origin"
    RM_CENTROID = "rm-centroid"
    RM_DENSITY = "rm-density"


@dataclass
class AdaptationOutcome:
    method: AdaptationMethod
    adapted: TrainedOption
    pair: tuple[str, str]
    pre_overlap: OverlapReport | None
    post_overlap: OverlapReport | None
    goal_pose: Pose | None = None
    goal_index: int | None = None
    skipped: bool = False
    warm_started: bool = False
    discard_rate: float | None = None

    def __post_init__(self) -> None:
        if (self.goal_pose is None) != (self.method is AdaptationMethod.ORIGIN or self.skipped):
            raise ConfigurationError("goal_pose must be set exactly for non-skipped result-method outcomes")

    @property
    def steps_used(self) -> int:
        return 0 if self.skipped else int(self.adapted.steps_used)

    @property
    def converged(self) -> bool:
        return self.adapted.converged

    def to_dict(self) -> dict:
        g = self.goal_pose
        return {
            "method": self.method.value, "pair": list(self.pair), "option": self.adapted.name,
            "skipped": self.skipped, "converged": bool(self.adapted.converged),
            "steps_used": self.steps_used, "seeding_steps": 0 if self.skipped else int(self.adapted.seeding_steps),
            "warm_started": self.warm_started, "discard_rate": self.discard_rate,
            "goal_index": self.goal_index,
            "goal_pose": None if g is None else {"position": g.position.tolist(),
                                                 "orientation": g.orientation.tolist()},
            "pre_overlap": None if self.pre_overlap is None else self.pre_overlap.to_dict(),
            "post_overlap": None if self.post_overlap is None else self.post_overlap.to_dict(),
        }


@dataclass
class SequenceAdaptation:
    method: AdaptationMethod
    chain: list[TrainedOption]
    outcomes: list[AdaptationOutcome] = field(default_factory=list)

    @property
    def steps_used(self) -> int:
        return sum(o.steps_used for o in self.outcomes)


def config_for(cfg: TrainConfig | Mapping[str, TrainConfig], option: str) -> TrainConfig:
    """A single config, or the entry for ``option`` in a per-option mapping."""
    if isinstance(cfg, TrainConfig):
        return cfg
    try:
        return cfg[option]
    except KeyError:
        raise ConfigurationError(f"no training config for option {option!r}") from None


def _derive_seed(seed: int, *tags: int) -> int:
    return int(np.random.SeedSequence([int(seed), *tags]).generate_state(1, dtype=np.uint64)[0])


def _overlap_or_empty(env: SurrogateEnv, pred: TrainedOption, origin: SampleSet, a: AnalysisConfig,
                      seed: int) -> OverlapReport:
    """Overlap of ``pred``'s result set with ``origin``; a policy with no
    successful rollouts (or no recorded starts) is reported as no overlap."""
    if len(pred.origin_log) == 0:
        return OverlapReport(0.0, 1.0, a.epsilon, a.voxel, a.containment_threshold)
    try:
        result = sample_result_set(env, pred, a.n_samples, seed, require_converged=False)
    except EmptyResultError:
        return OverlapReport(0.0, 1.0, a.epsilon, a.voxel, a.containment_threshold)
    return overlap(result, origin, a.epsilon, a.voxel, a.omega_r, a.containment_threshold)


def adapt_origin(env: SurrogateEnv, pred: TrainedOption, succ: TrainedOption | OptionSpec, cfg: TrainConfig,
                 seed: int, analysis: AnalysisConfig | None = None) -> AdaptationOutcome:
    """Train a fresh successor policy from the predecessor's actual terminal states."""
    a = analysis or AnalysisConfig()
    spec = succ.spec if isinstance(succ, TrainedOption) else succ
    if not pred.converged:
        raise PreconditionError(f"predecessor {pred.name!r} has not converged", predicate="converged")
    if not connected(pred.spec, spec):
        raise ConfigurationError(f"options {pred.name!r} -> {spec.name!r} are not connected")
    pre = None
    if isinstance(succ, TrainedOption):
        pre = _overlap_or_empty(env, pred, sample_origin_set(succ, a.n_samples, _derive_seed(seed, 1)), a,
                                _derive_seed(seed, 2))
    source = HandoffSource(pred, min_success=a.min_predecessor_success)
    adapted = train_option(env, spec, source, cfg, _derive_seed(seed, 3), omega_r=a.omega_r)
    post = None
    if len(adapted.origin_log):
        post = _overlap_or_empty(env, pred, sample_origin_set(adapted, a.n_samples, _derive_seed(seed, 4)), a,
                                 _derive_seed(seed, 5))
    return AdaptationOutcome(AdaptationMethod.ORIGIN, adapted, (pred.name, spec.name), pre, post,
                             discard_rate=source.discard_rate)


def select_goal(origin: SampleSet, method: AdaptationMethod, analysis: AnalysisConfig | None = None) -> int:
    a = analysis or AnalysisConfig()
    if method is AdaptationMethod.RM_CENTROID:
        return closest_to_centroid_index(origin)
    if method is AdaptationMethod.RM_DENSITY:
        return densest_sample_index(origin, a.omega_r, a.radius)
    raise ConfigurationError(f"{method.value} does not select a goal sample")


def adapt_result(env: SurrogateEnv, pred: TrainedOption, succ_origin: SampleSet, method: AdaptationMethod,
                 cfg: TrainConfig, seed: int, analysis: AnalysisConfig | None = None) -> AdaptationOutcome:
    """Retrain ``pred`` (warm-started) to terminate at a selected successor origin sample.

    Not reaching the goal within budget is reported through ``converged``,
    never raised.
    """
    a = analysis or AnalysisConfig()
    method = AdaptationMethod(method)
    if not pred.converged:
        raise PreconditionError(f"predecessor {pred.name!r} has not converged", predicate="converged")
    idx = select_goal(succ_origin, method, a)
    goal = succ_origin[idx].pose
    pre = _overlap_or_empty(env, pred, succ_origin, a, _derive_seed(seed, 1))
    adapted = train_option(env, pred.spec, pred.source, cfg, _derive_seed(seed, 2), goal=goal,
                           goal_tolerance=a.goal_tolerance, omega_r=a.omega_r, warm_start=pred.policy)
    post = _overlap_or_empty(env, adapted, succ_origin, a, _derive_seed(seed, 3))
    return AdaptationOutcome(method, adapted, (pred.name, succ_origin.option_name), pre, post,
                             goal_pose=goal, goal_index=idx, warm_started=True)


def adapt_sequence(env: SurrogateEnv, chain: Sequence[TrainedOption], method: AdaptationMethod,
                   cfg: TrainConfig | Mapping[str, TrainConfig], seed: int, analysis: AnalysisConfig | None = None) -> SequenceAdaptation:
    """Adapt a whole chain.

    Origin walks the pairs front to back, retraining every successor.
    Result methods walk back to front and leave already-composable pairs alone.
    """
    a = analysis or AnalysisConfig()
    method = AdaptationMethod(method)
    check_chain(chain)
    out = list(chain)
    outcomes: list[AdaptationOutcome] = []
    if method is AdaptationMethod.ORIGIN:
        for i in range(1, len(out)):
            o = adapt_origin(env, out[i - 1], out[i], config_for(cfg, out[i].name), _derive_seed(seed, i), a)
            out[i] = o.adapted
            outcomes.append(o)
        return SequenceAdaptation(method, out, outcomes)

    for i in range(len(out) - 2, -1, -1):
        pred, succ = out[i], out[i + 1]
        origin = sample_origin_set(succ, a.n_samples, _derive_seed(seed, i, 0))
        pre = _overlap_or_empty(env, pred, origin, a, _derive_seed(seed, i, 1))
        if pre.verdict_composable:
            outcomes.append(AdaptationOutcome(method, pred, (pred.name, succ.name), pre, pre, skipped=True))
            continue
        o = adapt_result(env, pred, origin, method, config_for(cfg, pred.name), _derive_seed(seed, i, 2), a)
        out[i] = o.adapted
        outcomes.append(o)
    outcomes.reverse()
    return SequenceAdaptation(method, out, outcomes)
