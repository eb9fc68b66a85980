"""Sequence evaluation: chain episodes, success reports and sample-complexity totals."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from optseq.env import VIOLATION_ORDER, States, SurrogateEnv, ViolationKind
from optseq.errors import ConfigurationError
from optseq.learner import SUCCESS, TIMEOUT, VIOLATION, RegionSource, TrainedOption, policy_actor, simulate
from optseq.options import connected

INIT_REJECTED = 4
METHOD_LABELS = ("independent", "origin", "rm-centroid", "rm-density")
# Episodes are simulated in fixed chunks of whole sets so results never depend
# on how many worker threads are used.
CHUNK_SETS = 25


def resolve_threads(requested: int | None = None) -> int:
    """Worker count from the argument or ``OPTSEQ_THREADS`` (0 means one per CPU)."""
    if requested is None:
        raw = os.environ.get("OPTSEQ_THREADS", "0")
        try:
            requested = int(raw)
        except ValueError:
            raise ConfigurationError(f"OPTSEQ_THREADS must be an integer, got {raw!r}") from None
    if requested < 0:
        raise ConfigurationError("thread count must be >= 0")
    return requested or (os.cpu_count() or 1)


@dataclass(frozen=True)
class EvalProtocol:
    sets: int = 100
    episodes_per_set: int = 10
    max_steps_per_option: int = 100
    master_seed: int = 0

    def __post_init__(self) -> None:
        if self.sets < 1 or self.episodes_per_set < 1:
            raise ConfigurationError("sets and episodes_per_set must be >= 1")
        if self.max_steps_per_option < 1:
            raise ConfigurationError("max_steps_per_option must be >= 1")

    @property
    def episodes(self) -> int:
        return self.sets * self.episodes_per_set


@dataclass(frozen=True)
class EpisodeResult:
    success: bool
    failed_at: str | None
    violation: ViolationKind | None
    outcome: str  # success | violation | timeout | init-rejected


@dataclass
class ChainBatch:
    """Per-episode outcome arrays for a batch of chain episodes."""

    outcome: np.ndarray  # SUCCESS, VIOLATION, TIMEOUT or INIT_REJECTED
    failed_at: np.ndarray  # index into the chain, -1 on success
    violation: np.ndarray  # index into VIOLATION_ORDER, -1 when none
    steps: np.ndarray
    final: States

    @property
    def success(self) -> np.ndarray:
        return self.outcome == SUCCESS


def check_chain(chain: Sequence[TrainedOption]) -> None:
    if not chain:
        raise ConfigurationError("chain must contain at least one option")
    for a, b in zip(chain, chain[1:]):
        if not connected(a.spec, b.spec):
            raise ConfigurationError(f"options {a.name!r} -> {b.name!r} are not connected")


def run_chain_batch(env: SurrogateEnv, chain: Sequence[TrainedOption], starts: States,
                    max_steps: int = 100) -> ChainBatch:
    """Execute the chain on every start state, handing off at each option's termination."""
    check_chain(chain)
    n = len(starts)
    s = starts.copy()
    outcome = np.full(n, SUCCESS, dtype=np.int8)
    failed_at = np.full(n, -1, dtype=np.int64)
    violation = np.full(n, -1, dtype=np.int8)
    steps = np.zeros(n, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    for k, opt in enumerate(chain):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        ok = opt.spec.init.batch(s.take(idx))
        rejected = idx[~ok]
        outcome[rejected] = INIT_REJECTED
        failed_at[rejected] = k
        alive[rejected] = False
        run = idx[ok]
        if run.size == 0:
            continue
        res = simulate(env, opt.objective, policy_actor(opt.policy), s.take(run), max_steps)
        s.assign(run, res.final)
        steps[run] += res.steps
        bad = ~res.success
        outcome[run[bad]] = res.status[bad]
        violation[run[bad]] = res.violation[bad]
        failed_at[run[bad]] = k
        alive[run[bad]] = False
    return ChainBatch(outcome, failed_at, violation, steps, s)


def _episode_rng(master_seed: int, set_idx: int, episode: int) -> np.random.Generator:
    return np.random.default_rng([int(master_seed), int(set_idx), int(episode)])


def chain_start_state(env: SurrogateEnv, first: TrainedOption, rng: np.random.Generator) -> States:
    """One start state from the first option's origin set.

    Region-trained options draw from their region; others resample their
    recorded origin log.
    """
    if isinstance(first.source, RegionSource):
        return first.source.sample(env, rng, 1)
    if len(first.origin_log) == 0:
        raise ConfigurationError(f"option {first.name!r} has no origin states to start from")
    return States.from_matrix(first.origin_log[rng.integers(0, len(first.origin_log), size=1)])


def run_sequence_episode(env: SurrogateEnv, chain: Sequence[TrainedOption], start_seed,
                         max_steps: int = 100) -> EpisodeResult:
    start = chain_start_state(env, chain[0], np.random.default_rng(start_seed))
    b = run_chain_batch(env, chain, start, max_steps)
    return _episode_result(chain, b, 0)


def _episode_result(chain, b: ChainBatch, i: int) -> EpisodeResult:
    code = int(b.outcome[i])
    names = {SUCCESS: "success", VIOLATION: "violation", TIMEOUT: "timeout", INIT_REJECTED: "init-rejected"}
    k = int(b.failed_at[i])
    v = int(b.violation[i])
    return EpisodeResult(
        success=code == SUCCESS,
        failed_at=None if k < 0 else chain[k].name,
        violation=None if v < 0 else VIOLATION_ORDER[v],
        outcome=names[code],
    )


@dataclass
class SuccessReport:
    """Success statistics for one chain under one method.

    ``violation_histogram`` + ``successes`` + ``timeout_count`` +
    ``init_rejections`` always equals ``episodes``.
    """

    chain: tuple[str, ...]
    method: str
    per_set_success: list[float]
    mean: float
    std: float
    violation_histogram: dict[str, int]
    timeout_count: int
    init_rejections: int
    successes: int
    episodes: int
    failed_at: dict[str, int] = field(default_factory=dict)
    master_seed: int = 0
    label: str = ""

    @property
    def pooled(self) -> float:
        return self.successes / self.episodes

    def partition_holds(self) -> bool:
        return (sum(self.violation_histogram.values()) + self.successes + self.timeout_count
                + self.init_rejections) == self.episodes

    def to_dict(self) -> dict:
        return {
            "chain": list(self.chain), "method": self.method, "label": self.label,
            "master_seed": self.master_seed, "episodes": self.episodes, "successes": self.successes,
            "pooled": self.pooled, "mean": self.mean, "std": self.std,
            "per_set_success": list(self.per_set_success),
            "violation_histogram": dict(self.violation_histogram), "timeout_count": self.timeout_count,
            "init_rejections": self.init_rejections, "failed_at": dict(self.failed_at),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SuccessReport":
        return cls(
            chain=tuple(d["chain"]), method=d["method"], per_set_success=[float(x) for x in d["per_set_success"]],
            mean=float(d["mean"]), std=float(d["std"]),
            violation_histogram={k: int(v) for k, v in d["violation_histogram"].items()},
            timeout_count=int(d["timeout_count"]), init_rejections=int(d["init_rejections"]),
            successes=int(d["successes"]), episodes=int(d["episodes"]),
            failed_at={k: int(v) for k, v in d.get("failed_at", {}).items()},
            master_seed=int(d.get("master_seed", 0)), label=d.get("label", ""),
        )


def measure_success(env: SurrogateEnv, chain: Sequence[TrainedOption], protocol: EvalProtocol,
                    method: str = "independent", threads: int | None = None, label: str = "") -> SuccessReport:
    """Run ``sets x episodes_per_set`` chain episodes with counter-derived seeds."""
    check_chain(chain)
    if method not in METHOD_LABELS:
        raise ConfigurationError(f"method must be one of {METHOD_LABELS}, got {method!r}")
    S, E = protocol.sets, protocol.episodes_per_set

    def run_chunk(first_set: int) -> ChainBatch:
        last = min(first_set + CHUNK_SETS, S)
        starts = States.concat([
            chain_start_state(env, chain[0], _episode_rng(protocol.master_seed, si, e))
            for si in range(first_set, last) for e in range(E)
        ])
        return run_chain_batch(env, chain, starts, protocol.max_steps_per_option)

    chunks = list(range(0, S, CHUNK_SETS))
    workers = min(resolve_threads(threads), len(chunks))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run_chunk, chunks))
    else:
        parts = [run_chunk(c) for c in chunks]

    outcome = np.concatenate([p.outcome for p in parts])
    failed = np.concatenate([p.failed_at for p in parts])
    viol = np.concatenate([p.violation for p in parts])
    per_set = (outcome == SUCCESS).reshape(S, E).mean(axis=1)
    hist = {k.value: int(np.count_nonzero((outcome == VIOLATION) & (viol == i)))
            for i, k in enumerate(VIOLATION_ORDER)}
    failed_at = {opt.name: int(np.count_nonzero(failed == i)) for i, opt in enumerate(chain)}
    return SuccessReport(
        chain=tuple(o.name for o in chain), method=method,
        per_set_success=[float(x) for x in per_set],
        mean=float(np.mean(per_set)), std=float(np.std(per_set)),
        violation_histogram=hist,
        timeout_count=int(np.count_nonzero(outcome == TIMEOUT)),
        init_rejections=int(np.count_nonzero(outcome == INIT_REJECTED)),
        successes=int(np.count_nonzero(outcome == SUCCESS)),
        episodes=int(outcome.size), failed_at=failed_at, master_seed=protocol.master_seed, label=label,
    )


def contiguous_subchains(n: int, min_len: int = 2) -> list[tuple[int, int]]:
    """``(start, stop)`` index pairs of every contiguous run of length ``min_len..n``."""
    return [(i, i + L) for L in range(min_len, n + 1) for i in range(0, n - L + 1)]


def evaluate_all_subchains(env: SurrogateEnv, options: Sequence[TrainedOption], protocol: EvalProtocol,
                           method: str = "independent", threads: int | None = None) -> list[SuccessReport]:
    """One report per contiguous subchain of length 2 to ``len(options)``."""
    check_chain(options)
    return [measure_success(env, options[a:b], protocol, method, threads)
            for a, b in contiguous_subchains(len(options))]


@dataclass
class ComplexityReport:
    method: str
    per_option_steps: dict[str, int]
    total_steps: int
    seeding_steps: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.total_steps != sum(self.per_option_steps.values()):
            raise ConfigurationError("total_steps must equal the sum of per_option_steps")

    def to_dict(self) -> dict:
        return {"method": self.method, "per_option_steps": dict(self.per_option_steps),
                "total_steps": self.total_steps, "seeding_steps": dict(self.seeding_steps)}

    @classmethod
    def from_dict(cls, d: dict) -> "ComplexityReport":
        return cls(d["method"], {k: int(v) for k, v in d["per_option_steps"].items()}, int(d["total_steps"]),
                   {k: int(v) for k, v in d.get("seeding_steps", {}).items()})


def complexity_report(entries: Iterable, method: str) -> ComplexityReport:
    """Sum training steps per option over trained options or adaptation outcomes.

    Adaptation outcomes that were skipped contribute zero.
    """
    per: dict[str, int] = {}
    seeding: dict[str, int] = {}
    for e in entries:
        trained = getattr(e, "adapted", e)
        steps = int(e.steps_used)
        per[trained.name] = per.get(trained.name, 0) + steps
        seeding[trained.name] = seeding.get(trained.name, 0) + (0 if getattr(e, "skipped", False)
                                                                  else int(trained.seeding_steps))
    return ComplexityReport(method, per, sum(per.values()), seeding)
