"""File formats: policies, sample sets, trained options and reports.

Policy file
    A UTF-8 text header of ``key: value`` lines starting with
    ``optseq-policy v1`` and ending with an empty line, followed by
    little-endian float64 arrays in this order: weights (action_dim x feature_dim,
    row-major), bias, feature mean, feature std, action_scale, action_offset.
    The ``goal`` header holds seven comma-separated floats (position then
    quaternion) for goal-conditioned policies, or ``none``.

Sample set
    CSV with header ``px,py,pz,qw,qx,qy,qz,gripper,attached,episode`` and a
    JSON sidecar with the same basename (kind, option_name, seed, generator).

Trained option directory
    ``<name>.policy``, ``<name>.origin.npy`` (the full start-state log) and
    ``<name>.json`` (steps, convergence, seed, goal, start source).
"""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from optseq import __version__
from optseq.env import ACTION_DIM, EnvConfig, InitRegion
from optseq.errors import ConfigurationError, StorageError
from optseq.geometry import Pose
from optseq.harness import ComplexityReport, SuccessReport
from optseq.learner import FEATURE_DIM, Policy, RegionSource, StatesSource, TrainedOption
from optseq.options import OptionConfig, OptionSpec, canonical_sequence
from optseq.samples import SampleSet, SetKind

POLICY_MAGIC = "optseq-policy v1"
SAMPLE_HEADER = ("px", "py", "pz", "qw", "qx", "qy", "qz", "gripper", "attached", "episode")
_LE = np.dtype("<f8")


def _write_bytes(path: Path, data: bytes) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from None


def _read_bytes(path: Path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from None


def write_text(path: str | Path, text: str) -> None:
    _write_bytes(Path(path), text.encode("utf-8"))


def read_text(path: str | Path) -> str:
    return _read_bytes(Path(path)).decode("utf-8")


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------
def policy_to_bytes(policy: Policy, option: str, steps_used: int = 0, seed: int = 0) -> bytes:
    header = [POLICY_MAGIC, f"option: {option}", f"feature_spec: {policy.feature_spec}",
              f"steps_used: {int(steps_used)}", f"seed: {int(seed)}",
              f"action_dim: {ACTION_DIM}", f"feature_dim: {FEATURE_DIM}",
              "goal: " + ("none" if policy.goal is None else ",".join(repr(float(x)) for x in policy.goal)), "", ""]
    body = np.concatenate([policy.weights.ravel(), policy.bias, policy.obs_mean, policy.obs_std,
                           policy.action_scale, policy.action_offset]).astype(_LE)
    return "\n".join(header).encode("utf-8") + body.tobytes()


def policy_from_bytes(data: bytes) -> tuple[Policy, dict]:
    sep = data.find(b"\n\n")
    if not data.startswith(POLICY_MAGIC.encode()) or sep < 0:
        raise StorageError("not an optseq policy file")
    lines = data[:sep].decode("utf-8").split("\n")[1:]
    try:
        meta = dict(line.split(": ", 1) for line in lines)
    except ValueError:
        raise StorageError("malformed policy header") from None
    if int(meta["action_dim"]) != ACTION_DIM or int(meta["feature_dim"]) != FEATURE_DIM:
        raise StorageError("policy dimensions do not match this build")
    body = np.frombuffer(data[sep + 2:], dtype=_LE).astype(float)
    sizes = [ACTION_DIM * FEATURE_DIM, ACTION_DIM, FEATURE_DIM, FEATURE_DIM, ACTION_DIM, ACTION_DIM]
    if body.size != sum(sizes):
        raise StorageError(f"policy body has {body.size} values, expected {sum(sizes)}")
    parts = np.split(body, np.cumsum(sizes)[:-1])
    goal = meta.get("goal", "none")
    try:
        goal_arr = None if goal == "none" else np.array([float(x) for x in goal.split(",")])
    except ValueError:
        raise StorageError(f"bad goal header {goal!r}") from None
    policy = Policy(parts[0].reshape(ACTION_DIM, FEATURE_DIM), *parts[1:], feature_spec=meta["feature_spec"],
                    goal=goal_arr)
    meta["steps_used"] = int(meta["steps_used"])
    meta["seed"] = int(meta["seed"])
    return policy, meta


def write_policy(path: str | Path, policy: Policy, option: str, steps_used: int = 0, seed: int = 0) -> None:
    _write_bytes(Path(path), policy_to_bytes(policy, option, steps_used, seed))


def read_policy(path: str | Path) -> tuple[Policy, dict]:
    return policy_from_bytes(_read_bytes(Path(path)))


# ---------------------------------------------------------------------------
# Sample sets
# ---------------------------------------------------------------------------
def sample_set_to_csv(s: SampleSet) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SAMPLE_HEADER)
    for i in range(len(s)):
        w.writerow([*(repr(float(x)) for x in s.positions[i]), *(repr(float(x)) for x in s.orientations[i]),
                    repr(float(s.gripper[i])), int(s.attached[i]), int(s.episodes[i])])
    return buf.getvalue()


def sample_set_from_csv(text: str, kind: SetKind, option_name: str) -> SampleSet:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != SAMPLE_HEADER:
        raise StorageError(f"sample file header must be {','.join(SAMPLE_HEADER)}")
    body = rows[1:]
    if not body:
        return SampleSet(kind, option_name, np.zeros((0, 3)), np.zeros((0, 4)), [], [], [])
    try:
        m = np.array([[float(x) for x in r] for r in body])
    except ValueError as exc:
        raise StorageError(f"malformed sample row: {exc}") from None
    return SampleSet(kind, option_name, m[:, 0:3], m[:, 3:7], m[:, 7], m[:, 8] > 0.5, m[:, 9].astype(np.int64))


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def write_sample_set(path: str | Path, s: SampleSet, seed: int | None = None) -> None:
    path = Path(path)
    write_text(path, sample_set_to_csv(s))
    meta = {"kind": s.kind.value, "option_name": s.option_name,
            "seed": s.meta.get("seed") if seed is None else int(seed),
            "generator": f"optseq {__version__}", "count": len(s)}
    meta.update({k: v for k, v in s.meta.items() if k not in meta})
    write_text(_sidecar(path), json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_sample_set(path: str | Path) -> SampleSet:
    path = Path(path)
    try:
        meta = json.loads(read_text(_sidecar(path)))
    except json.JSONDecodeError as exc:
        raise StorageError(f"bad sidecar for {path}: {exc}") from None
    s = sample_set_from_csv(read_text(path), SetKind(meta["kind"]), meta["option_name"])
    s.meta.update({k: v for k, v in meta.items() if k not in ("kind", "option_name")})
    return s


# ---------------------------------------------------------------------------
# Trained options
# ---------------------------------------------------------------------------
def save_trained(directory: str | Path, trained: TrainedOption, extra: dict | None = None) -> None:
    d = Path(directory)
    write_policy(d / f"{trained.name}.policy", trained.policy, trained.name, trained.steps_used, trained.seed)
    buf = io.BytesIO()
    np.save(buf, trained.origin_log.astype(_LE), allow_pickle=False)
    _write_bytes(d / f"{trained.name}.origin.npy", buf.getvalue())
    g = trained.goal_pose
    meta = {
        "option": trained.name, "steps_used": int(trained.steps_used), "seeding_steps": int(trained.seeding_steps),
        "converged": bool(trained.converged), "seed": int(trained.seed),
        "goal_pose": None if g is None else {"position": g.position.tolist(), "orientation": g.orientation.tolist()},
        "goal_tolerance": trained.goal_tolerance, "omega_r": trained.omega_r,
        "source": trained.source.describe(), "history": trained.history,
    }
    meta.update(extra or {})
    write_text(d / f"{trained.name}.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_trained(directory: str | Path, spec: OptionSpec) -> TrainedOption:
    d = Path(directory)
    policy, header = read_policy(d / f"{spec.name}.policy")
    try:
        meta = json.loads(read_text(d / f"{spec.name}.json"))
        origin_log = np.load(io.BytesIO(_read_bytes(d / f"{spec.name}.origin.npy")), allow_pickle=False)
    except (json.JSONDecodeError, ValueError) as exc:
        raise StorageError(f"corrupt trained option {spec.name!r} in {d}: {exc}") from None
    src = meta["source"]
    source = RegionSource(InitRegion.from_dict(src["region"])) if src["type"] == "region" else StatesSource(origin_log)
    g = meta.get("goal_pose")
    return TrainedOption(
        spec=spec, policy=policy, source=source, origin_log=np.asarray(origin_log, dtype=float),
        steps_used=int(meta["steps_used"]), converged=bool(meta["converged"]), seed=int(meta["seed"]),
        goal_pose=None if g is None else Pose(g["position"], g["orientation"]),
        goal_tolerance=float(meta["goal_tolerance"]), omega_r=float(meta["omega_r"]),
        seeding_steps=int(meta.get("seeding_steps", 0)), history=list(meta.get("history", [])),
    )


def available_options(directory: str | Path) -> list[str]:
    return sorted(p.stem for p in Path(directory).glob("*.policy"))


def load_chain(directory: str | Path, names: Sequence[str], env_config: EnvConfig | None = None,
               option_config: OptionConfig | None = None) -> list[TrainedOption]:
    """Load options by name, sharing condition objects like :func:`canonical_sequence`."""
    specs = {s.name: s for s in canonical_sequence(env_config, option_config)}
    unknown = [n for n in names if n not in specs]
    if unknown:
        raise ConfigurationError(f"unknown options {unknown}")
    return [load_trained(directory, specs[n]) for n in names]


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------
SUCCESS_COLUMNS = ("label", "method", "chain", "length", "episodes", "successes", "pooled", "mean", "std",
                   "collision", "cup_horizontal", "cup_off_table", "timeouts", "init_rejections",
                   "per_set_success")


def _success_row(r: SuccessReport) -> list:
    h = r.violation_histogram
    return [r.label, r.method, "-".join(r.chain), len(r.chain), r.episodes, r.successes, repr(r.pooled),
            repr(r.mean), repr(r.std), h.get("Collision", 0), h.get("CupHorizontal", 0), h.get("CupOffTable", 0),
            r.timeout_count, r.init_rejections, ";".join(repr(x) for x in r.per_set_success)]


def success_csv(reports: Iterable[SuccessReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUCCESS_COLUMNS)
    for r in reports:
        w.writerow(_success_row(r))
    return buf.getvalue()


def complexity_csv(reports: Iterable[ComplexityReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("method", "option", "steps", "seeding_steps"))
    for c in reports:
        for name, steps in c.per_option_steps.items():
            w.writerow((c.method, name, steps, c.seeding_steps.get(name, 0)))
        w.writerow((c.method, "TOTAL", c.total_steps, sum(c.seeding_steps.values())))
    return buf.getvalue()


def _md_table(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    out = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    out += ["| " + " | ".join(str(x) for x in row) + " |" for row in rows]
    return "\n".join(out) + "\n"


def success_markdown(reports: Sequence[SuccessReport]) -> str:
    return _md_table(
        ("label", "method", "chain", "episodes", "pooled", "mean", "std", "violations", "timeouts"),
        ((r.label, r.method, " > ".join(r.chain), r.episodes, f"{r.pooled:.3f}", f"{r.mean:.3f}", f"{r.std:.3f}",
          sum(r.violation_histogram.values()), r.timeout_count) for r in reports))


def complexity_markdown(reports: Sequence[ComplexityReport]) -> str:
    names = sorted({n for c in reports for n in c.per_option_steps})
    return _md_table(("method", *names, "total"),
                     ((c.method, *(c.per_option_steps.get(n, 0) for n in names), c.total_steps) for c in reports))


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def emit_report(path: str | Path, success: Sequence[SuccessReport] = (),
                complexity: Sequence[ComplexityReport] = (), fmt: str = "json", extra: dict | None = None) -> None:
    """Write reports as ``json``, ``csv`` or ``md``. Output is byte-deterministic."""
    if fmt == "json":
        doc = {"success": [r.to_dict() for r in success], "complexity": [c.to_dict() for c in complexity]}
        doc.update(extra or {})
        text = dumps_json(doc)
    elif fmt == "csv":
        text = success_csv(success) if success else complexity_csv(complexity)
    elif fmt == "md":
        parts = []
        if success:
            parts.append("## Success\n\n" + success_markdown(success))
        if complexity:
            parts.append("## Training steps\n\n" + complexity_markdown(complexity))
        text = "\n".join(parts)
    else:
        raise ConfigurationError(f"unknown report format {fmt!r}; use json, csv or md")
    write_text(path, text)


def load_report(path: str | Path) -> tuple[list[SuccessReport], list[ComplexityReport], dict]:
    try:
        doc = json.loads(read_text(path))
    except json.JSONDecodeError as exc:
        raise StorageError(f"{path} is not a JSON report: {exc}") from None
    success = [SuccessReport.from_dict(d) for d in doc.pop("success", [])]
    complexity = [ComplexityReport.from_dict(d) for d in doc.pop("complexity", [])]
    return success, complexity, doc
