from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import scripted_option
from optseq.adaptation import AdaptationMethod, AdaptationOutcome
from optseq.env import States
from optseq.errors import ConfigurationError
from optseq.harness import (CHUNK_SETS, ComplexityReport, EvalProtocol, SuccessReport, complexity_report,
                            contiguous_subchains, evaluate_all_subchains, measure_success, run_chain_batch,
                            run_sequence_episode)
from optseq.learner import Policy, TrainedOption
from optseq.scenario import offset_regions

REGIONS = offset_regions()
DEFAULT = REGIONS["reach"]


@pytest.fixture
def chain(seq):
    return [scripted_option(s, REGIONS[s.name]) for s in seq]


def idle(t: TrainedOption, env) -> TrainedOption:
    return TrainedOption(t.spec, Policy.zeros(env, gripper_hold=1.0), t.source, t.origin_log, converged=True)


def test_scripted_chain_always_succeeds(env, chain):
    r = measure_success(env, chain, EvalProtocol(10, 10))
    assert r.pooled == r.mean == 1.0 and r.std == 0.0
    assert r.episodes == 100 and r.partition_holds()
    assert set(r.failed_at.values()) == {0}


def test_idle_chain_never_succeeds(env, chain):
    r = measure_success(env, [idle(chain[0], env)] + chain[1:], EvalProtocol(5, 4))
    assert r.pooled == 0.0 and r.timeout_count == 20 and r.failed_at["reach"] == 20
    assert r.partition_holds()


def test_init_rejection_is_attributed(env, chain):
    # lift cannot start from states where grasp was skipped
    with pytest.raises(ConfigurationError):
        run_chain_batch(env, [chain[0], chain[2]], States.from_matrix(np.zeros((0, 21))))
    b = run_chain_batch(env, chain[1:3], env.reset_batch(REGIONS["reach"], np.random.default_rng(0), 6))
    assert np.all(b.failed_at == 0) and np.all(b.outcome == 4)
    assert np.all(b.steps == 0)


def test_single_episode(env, chain):
    ep = run_sequence_episode(env, chain, 7)
    assert ep.success and ep.failed_at is None and ep.outcome == "success"
    bad = run_sequence_episode(env, [idle(chain[0], env)], 7, max_steps=3)
    assert not bad.success and bad.failed_at == "reach" and bad.outcome == "timeout"


def test_same_seed_same_report(env, chain):
    p = EvalProtocol(6, 5, master_seed=3)
    mixed = [chain[0], idle(chain[1], env)]
    a, b = measure_success(env, mixed, p), measure_success(env, mixed, p)
    assert a.to_dict() == b.to_dict()


def test_reports_do_not_depend_on_thread_count(env, seq):
    half = TrainedOption(seq[0], Policy.zeros(env, gripper_hold=1.0), scripted_option(seq[0], DEFAULT).source,
                         np.zeros((0, 21)), converged=True)
    # a half-solving controller gives a non-trivial per-set pattern
    half.policy.bias[:3] = [0.3, 0.0, -0.5]
    p = EvalProtocol(2 * CHUNK_SETS + 3, 4, master_seed=11)
    one = measure_success(env, [half], p, threads=1)
    many = measure_success(env, [half], p, threads=4)
    assert one.to_dict() == many.to_dict()


def test_mean_and_std_recompute(env, seq):
    half = scripted_option(seq[0], REGIONS["reach"])
    half = TrainedOption(half.spec, Policy.zeros(env, gripper_hold=1.0), half.source, half.origin_log,
                         converged=True)
    half.policy.bias[:3] = [0.2, 0.1, -0.6]
    r = measure_success(env, [half], EvalProtocol(20, 10))
    per = np.array(r.per_set_success)
    assert abs(r.mean - per.mean()) <= 1e-12 and abs(r.std - per.std()) <= 1e-12
    assert r.pooled == pytest.approx(per.mean(), abs=1e-12)


def test_report_dict_round_trip(env, chain):
    r = measure_success(env, chain[:2], EvalProtocol(3, 3), label="x")
    assert SuccessReport.from_dict(r.to_dict()) == r


def test_protocol_validation(env, chain):
    with pytest.raises(ConfigurationError):
        EvalProtocol(0, 10)
    with pytest.raises(ConfigurationError):
        measure_success(env, chain, EvalProtocol(1, 1), method="bogus")
    with pytest.raises(ConfigurationError):
        measure_success(env, [], EvalProtocol(1, 1))


# -- subchains -------------------------------------------------------------
def test_ten_subchains_of_five():
    spans = contiguous_subchains(5)
    assert len(spans) == 10 and spans[:4] == [(0, 2), (1, 3), (2, 4), (3, 5)] and spans[-1] == (0, 5)


@given(st.integers(1, 12))
@settings(max_examples=12)
def test_subchain_count(n):
    assert len(contiguous_subchains(n)) == n * (n - 1) // 2


def test_evaluate_all_subchains(env, chain):
    reps = evaluate_all_subchains(env, chain, EvalProtocol(1, 5))
    assert [len(r.chain) for r in reps] == [2, 2, 2, 2, 3, 3, 3, 4, 4, 5]
    assert all(r.pooled == 1.0 for r in reps)


# -- complexity ------------------------------------------------------------
def test_complexity_sums_steps(seq):
    opts = [scripted_option(s, REGIONS[s.name]) for s in seq]
    for i, o in enumerate(opts):
        o.steps_used = 1000 * (i + 1)
        o.seeding_steps = i
    rep = complexity_report(opts, "independent")
    assert rep.total_steps == 15_000 and rep.per_option_steps["carry"] == 4000
    assert rep.seeding_steps["place"] == 4
    assert ComplexityReport.from_dict(rep.to_dict()) == rep
    with pytest.raises(ConfigurationError):
        ComplexityReport("origin", {"a": 1}, 2)


def test_skipped_outcomes_count_zero(seq):
    t = scripted_option(seq[0], REGIONS["reach"])
    t.steps_used = 999
    skipped = AdaptationOutcome(AdaptationMethod.RM_DENSITY, t, ("reach", "grasp"), None, None, skipped=True)
    rep = complexity_report([skipped], "rm-density")
    assert rep.total_steps == 0 and rep.per_option_steps == {"reach": 0}
