"""End-to-end runs: train the five options independently, evaluate every
subchain, adapt the chain with each method and compare success and cost."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from optseq.adaptation import AdaptationMethod, SequenceAdaptation, adapt_sequence
from optseq.env import SurrogateEnv
from optseq.errors import PreconditionError
from optseq.harness import (ComplexityReport, EvalProtocol, SuccessReport, complexity_report,
                            evaluate_all_subchains, measure_success)
from optseq.learner import RegionSource, TrainedOption, train_option
from optseq.options import OPTION_NAMES, canonical_sequence
from optseq.scenario import Scenario
from optseq.sets import OverlapReport, overlap, sample_origin_set, sample_result_set

log = logging.getLogger(__name__)

ALL_METHODS = (AdaptationMethod.ORIGIN, AdaptationMethod.RM_CENTROID, AdaptationMethod.RM_DENSITY)


def option_seed(master: int, index: int, stage: int = 0) -> int:
    """Per-option seed derived from the master seed, the option's position and the stage."""
    return int(np.random.SeedSequence([int(master), int(stage), int(index)]).generate_state(1, np.uint64)[0])


def make_env(scenario: Scenario) -> SurrogateEnv:
    return SurrogateEnv(scenario.env)


def train_one(scenario: Scenario, name: str, seed: int, env: SurrogateEnv | None = None) -> TrainedOption:
    env = env or make_env(scenario)
    specs = {s.name: s for s in canonical_sequence(scenario.env, scenario.option)}
    return train_option(env, specs[name], RegionSource(scenario.region(name)), scenario.train_config(name),
                        seed, omega_r=scenario.analysis.omega_r)


def train_independent(scenario: Scenario, master_seed: int, env: SurrogateEnv | None = None) -> list[TrainedOption]:
    """The canonical chain, each option trained on its own start region."""
    env = env or make_env(scenario)
    out = []
    for i, name in enumerate(OPTION_NAMES):
        t = train_one(scenario, name, option_seed(master_seed, i), env)
        log.info("trained %s seed=%d converged=%s steps=%d", name, master_seed, t.converged, t.steps_used)
        out.append(t)
    return out


def protocol_for(scenario: Scenario, master_seed: int) -> EvalProtocol:
    p = scenario.protocol
    return EvalProtocol(p.sets, p.episodes_per_set, p.max_steps_per_option, int(master_seed))


def pair_overlap(env: SurrogateEnv, pred: TrainedOption, succ: TrainedOption, scenario: Scenario,
                 seed: int) -> OverlapReport:
    """Containment of ``pred``'s result set in ``succ``'s origin set (no convergence precondition)."""
    a = scenario.analysis
    origin = sample_origin_set(succ, a.n_samples, option_seed(seed, 0, 7))
    result = sample_result_set(env, pred, a.n_samples, option_seed(seed, 1, 7), require_converged=False)
    return overlap(result, origin, a.epsilon, a.voxel, a.omega_r, a.containment_threshold)


@dataclass
class SeedRun:
    master_seed: int
    independent: list[TrainedOption]
    subchains: list[SuccessReport]
    adaptations: dict[str, SequenceAdaptation] = field(default_factory=dict)
    full_chain: dict[str, SuccessReport] = field(default_factory=dict)
    complexity: dict[str, ComplexityReport] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)

    def success(self, method: str) -> float:
        """Pooled full-chain success; a method that could not finish adapting scores 0."""
        r = self.full_chain.get(method)
        return 0.0 if r is None else r.pooled


def run_independent(scenario: Scenario, master_seed: int, threads: int | None = None,
                    env: SurrogateEnv | None = None) -> SeedRun:
    """Train the chain independently and evaluate every contiguous subchain."""
    env = env or make_env(scenario)
    chain = train_independent(scenario, master_seed, env)
    run = SeedRun(master_seed, chain,
                  evaluate_all_subchains(env, chain, protocol_for(scenario, master_seed), "independent", threads))
    run.full_chain["independent"] = run.subchains[-1]
    run.complexity["independent"] = complexity_report(chain, "independent")
    return run


def run_adaptations(run: SeedRun, scenario: Scenario, methods=ALL_METHODS, threads: int | None = None,
                    env: SurrogateEnv | None = None) -> SeedRun:
    """Adapt ``run.independent`` with each method and measure the full chain."""
    env = env or make_env(scenario)
    protocol = protocol_for(scenario, run.master_seed)
    adapt_cfgs = scenario.train_configs(adapt=True)
    for k, m in enumerate(methods):
        m = AdaptationMethod(m)
        try:
            seq = adapt_sequence(env, run.independent, m, adapt_cfgs, option_seed(run.master_seed, k, 1),
                                 scenario.analysis)
        except PreconditionError as exc:
            # e.g. an adapted option did not converge, so the next pair cannot start
            run.errors[m.value] = str(exc)
            log.warning("seed=%d %s adaptation stopped: %s", run.master_seed, m.value, exc)
            continue
        run.adaptations[m.value] = seq
        run.full_chain[m.value] = measure_success(env, seq.chain, protocol, m.value, threads)
        run.complexity[m.value] = complexity_report(seq.outcomes, m.value)
        log.info("seed=%d %s full-chain success=%.3f", run.master_seed, m.value, run.full_chain[m.value].pooled)
    return run


def run_seed(scenario: Scenario, master_seed: int, methods=ALL_METHODS, threads: int | None = None,
             env: SurrogateEnv | None = None) -> SeedRun:
    env = env or make_env(scenario)
    return run_adaptations(run_independent(scenario, master_seed, threads, env), scenario, methods, threads, env)
