"""Origin/result set sampling, goal selectors and overlap metrics."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from optseq.env import States, SurrogateEnv
from optseq.errors import ContractError, EmptyResultError, PreconditionError, ProvenanceError
from optseq.learner import TrainedOption, policy_actor, simulate
from optseq.metrics import DEFAULT_OMEGA_R, _check_omega, pose_distance_arrays
from optseq.samples import PoseSample, SampleSet, SetKind

DEFAULT_EPSILON = 0.02
DEFAULT_VOXEL = 0.05
DEFAULT_RADIUS = 0.05
CONTAINMENT_THRESHOLD = 0.9
_CHUNK = 512


def _nonempty(s: SampleSet, what: str = "sample set") -> SampleSet:
    if len(s) == 0:
        raise ContractError(f"{what} is empty")
    return s


def centroid(samples: SampleSet) -> np.ndarray:
    """Mean position. Orientations are not averaged."""
    return _nonempty(samples).positions.mean(axis=0)


def closest_to_centroid_index(samples: SampleSet) -> int:
    c = centroid(samples)
    d = np.linalg.norm(samples.positions - c, axis=1)
    return int(np.argmin(d))  # argmin returns the first minimum


def closest_to_centroid(samples: SampleSet) -> PoseSample:
    """Sample whose position is nearest the centroid; ties go to the lowest index."""
    return samples[closest_to_centroid_index(samples)]


def _pairwise(pa, qa, pb, qb, omega_r: float) -> np.ndarray:
    return pose_distance_arrays(pa[:, None, :], qa[:, None, :], pb[None, :, :], qb[None, :, :], omega_r)


def neighbor_counts(samples: SampleSet, omega_r: float = DEFAULT_OMEGA_R,
                    radius: float = DEFAULT_RADIUS) -> np.ndarray:
    """Number of *other* samples within ``radius`` pose distance of each sample."""
    omega_r = _check_omega(omega_r)
    if not radius > 0:
        raise ContractError("radius must be positive")
    _nonempty(samples)
    n = len(samples)
    counts = np.zeros(n, dtype=np.int64)
    p, q = samples.positions, samples.orientations
    for lo in range(0, n, _CHUNK):
        d = _pairwise(p[lo:lo + _CHUNK], q[lo:lo + _CHUNK], p, q, omega_r)
        counts[lo:lo + _CHUNK] = np.count_nonzero(d <= radius, axis=1)
    return counts - 1  # every sample is within radius of itself


def densest_sample_index(samples: SampleSet, omega_r: float = DEFAULT_OMEGA_R,
                         radius: float = DEFAULT_RADIUS) -> int:
    return int(np.argmax(neighbor_counts(samples, omega_r, radius)))


def densest_sample(samples: SampleSet, omega_r: float = DEFAULT_OMEGA_R,
                   radius: float = DEFAULT_RADIUS) -> PoseSample:
    """Sample with the most neighbours within ``radius``; ties go to the lowest index."""
    return samples[densest_sample_index(samples, omega_r, radius)]


def containment_fraction(result: SampleSet, origin: SampleSet, epsilon: float = DEFAULT_EPSILON,
                         omega_r: float = DEFAULT_OMEGA_R) -> float:
    """Fraction of result samples with some origin sample within ``epsilon``."""
    omega_r = _check_omega(omega_r)
    if not epsilon > 0:
        raise ContractError("epsilon must be positive")
    _nonempty(result, "result set")
    _nonempty(origin, "origin set")
    hit = 0
    for lo in range(0, len(result), _CHUNK):
        d = _pairwise(result.positions[lo:lo + _CHUNK], result.orientations[lo:lo + _CHUNK],
                      origin.positions, origin.orientations, omega_r)
        hit += int(np.count_nonzero(np.any(d <= epsilon, axis=1)))
    return hit / len(result)


def voxel_keys(positions: np.ndarray, voxel: float) -> set[tuple[int, int, int]]:
    keys = np.floor(np.asarray(positions, dtype=float) / voxel).astype(np.int64)
    return set(map(tuple, keys.tolist()))


def jaccard_distance(a: SampleSet, b: SampleSet, voxel: float = DEFAULT_VOXEL) -> float:
    """``1 - |A ∩ B| / |A ∪ B|`` over the sets of occupied position voxels."""
    if not voxel > 0:
        raise ContractError("voxel must be positive")
    va = voxel_keys(_nonempty(a).positions, voxel)
    vb = voxel_keys(_nonempty(b).positions, voxel)
    return 1.0 - len(va & vb) / len(va | vb)


@dataclass(frozen=True)
class OverlapReport:
    containment_fraction: float
    jaccard_distance: float
    epsilon: float
    voxel_size: float
    threshold: float = CONTAINMENT_THRESHOLD

    @property
    def verdict_composable(self) -> bool:
        return self.containment_fraction >= self.threshold

    def to_dict(self) -> dict:
        d = asdict(self)
        d["verdict_composable"] = self.verdict_composable
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "OverlapReport":
        return cls(float(d["containment_fraction"]), float(d["jaccard_distance"]), float(d["epsilon"]),
                   float(d["voxel_size"]), float(d.get("threshold", CONTAINMENT_THRESHOLD)))


def overlap(result: SampleSet, origin: SampleSet, epsilon: float = DEFAULT_EPSILON,
            voxel: float = DEFAULT_VOXEL, omega_r: float = DEFAULT_OMEGA_R,
            threshold: float = CONTAINMENT_THRESHOLD) -> OverlapReport:
    return OverlapReport(
        containment_fraction=containment_fraction(result, origin, epsilon, omega_r),
        jaccard_distance=jaccard_distance(result, origin, voxel),
        epsilon=float(epsilon), voxel_size=float(voxel), threshold=float(threshold),
    )


def _subsample_rows(n_rows: int, n: int, rng: np.random.Generator) -> np.ndarray:
    # Without replacement when the log is large enough, otherwise with replacement.
    if n_rows >= n:
        return rng.choice(n_rows, size=n, replace=False)
    return rng.integers(0, n_rows, size=n)


def sample_origin_set(trained: TrainedOption, n: int = 1000, seed: int = 0) -> SampleSet:
    """Uniform subsample of the start states logged while training ``trained``."""
    if n < 1:
        raise ContractError("n must be >= 1")
    log = trained.origin_log
    if len(log) == 0:
        raise ProvenanceError(f"option {trained.name!r} has an empty origin log")
    idx = _subsample_rows(len(log), n, np.random.default_rng(seed))
    out = SampleSet.from_state_matrix(SetKind.ORIGIN, trained.name, log[idx], episodes=idx)
    out.meta.update({"seed": int(seed), "log_size": int(len(log))})
    return out


def origin_start_states(trained: TrainedOption, n: int, seed: int) -> States:
    log = trained.origin_log
    if len(log) == 0:
        raise ProvenanceError(f"option {trained.name!r} has an empty origin log")
    idx = _subsample_rows(len(log), n, np.random.default_rng(seed))
    return States.from_matrix(log[idx])


def sample_result_set(env: SurrogateEnv, trained: TrainedOption, n: int = 1000, seed: int = 0,
                      *, require_converged: bool = True) -> SampleSet:
    """Terminal ee poses of the successful rollouts started from the origin log.

    ``meta["successes"]`` and ``meta["rollouts"]`` record how many of the ``n``
    rollouts reached termination.
    """
    if n < 1:
        raise ContractError("n must be >= 1")
    if require_converged and not trained.converged:
        raise PreconditionError(f"option {trained.name!r} has not converged", predicate="converged")
    starts = origin_start_states(trained, n, seed)
    res = simulate(env, trained.objective, policy_actor(trained.policy), starts, env.config.max_steps)
    ok = np.flatnonzero(res.success)
    if ok.size == 0:
        raise EmptyResultError(f"no successful rollouts for option {trained.name!r} out of {n}")
    out = SampleSet.from_state_matrix(SetKind.RESULT, trained.name, res.final.take(ok).as_matrix(), episodes=ok)
    out.meta.update({"seed": int(seed), "rollouts": int(n), "successes": int(ok.size)})
    return out
