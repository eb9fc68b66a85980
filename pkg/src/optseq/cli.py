"""Command-line interface: ``optseq train|sample|analyze|adapt|evaluate|report``.

Every verb reads an optional YAML configuration (``--config``) plus
``--set key=value`` overrides. Exit codes: 0 success, 2 configuration error,
3 precondition or provenance error, 4 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import yaml

from optseq import __version__
from optseq.adaptation import AdaptationMethod, adapt_sequence
from optseq.errors import ConfigurationError, OptseqError, ProvenanceError, StorageError
from optseq.experiment import make_env, option_seed, protocol_for, train_one
from optseq.harness import EvalProtocol, complexity_report, evaluate_all_subchains, measure_success
from optseq.options import OPTION_NAMES
from optseq.samples import SetKind
from optseq.scenario import Scenario, load_scenario
from optseq.sets import overlap, sample_origin_set, sample_result_set
from optseq import storage

log = logging.getLogger("optseq")


def _overrides(pairs: Sequence[str]) -> dict:
    out = {}
    for item in pairs or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = yaml.safe_load(value)
    return out


def _scenario(args) -> Scenario:
    return load_scenario(args.config, _overrides(args.set))


def _names(text: str) -> list[str]:
    names = [n.strip() for n in text.split(",") if n.strip()]
    unknown = [n for n in names if n not in OPTION_NAMES]
    if not names or unknown:
        raise ConfigurationError(f"bad option list {text!r}; options are {','.join(OPTION_NAMES)}")
    return names


def _chain_in(directory: Path) -> list[str]:
    """Options present in ``directory``, in canonical order."""
    if not directory.is_dir():
        raise StorageError(f"{directory} is not a directory")
    present = set(storage.available_options(directory))
    return [n for n in OPTION_NAMES if n in present]


# ---------------------------------------------------------------------------
def cmd_train(args) -> int:
    sc = _scenario(args)
    env = make_env(sc)
    names = list(OPTION_NAMES) if args.option == "all" else _names(args.option)
    out = Path(args.out)
    for name in names:
        seed = option_seed(args.seed, OPTION_NAMES.index(name)) if args.option == "all" else args.seed
        t = train_one(sc, name, seed, env)
        storage.save_trained(out, t, {"master_seed": args.seed})
        print(f"{name}: converged={t.converged} steps={t.steps_used}")
    return 0


def _load_policy_file(policy: Path, sc: Scenario):
    _, header = storage.read_policy(policy)
    name = header["option"]
    if name not in OPTION_NAMES:
        raise ProvenanceError(f"{policy} belongs to unknown option {name!r}")
    return storage.load_chain(policy.parent, [name], sc.env, sc.option)[0]


def cmd_sample(args) -> int:
    sc = _scenario(args)
    trained = _load_policy_file(Path(args.policy), sc)
    if args.kind == "origin":
        s = sample_origin_set(trained, args.n, args.seed)
    else:
        s = sample_result_set(make_env(sc), trained, args.n, args.seed, require_converged=not args.allow_unconverged)
    storage.write_sample_set(args.out, s, args.seed)
    print(f"{args.kind} set for {trained.name}: {len(s)} samples -> {args.out}")
    return 0


def cmd_analyze(args) -> int:
    sc = _scenario(args)
    result = storage.read_sample_set(args.result)
    origin = storage.read_sample_set(args.origin)
    if result.kind is not SetKind.RESULT or origin.kind is not SetKind.ORIGIN:
        raise ProvenanceError(f"expected a result set and an origin set, got {result.kind.value} and "
                              f"{origin.kind.value}")
    a = sc.analysis
    eps = a.epsilon if args.eps is None else args.eps
    voxel = a.voxel if args.voxel is None else args.voxel
    rep = overlap(result, origin, eps, voxel, a.omega_r, a.containment_threshold)
    doc = {"result": {"option": result.option_name, "count": len(result)},
           "origin": {"option": origin.option_name, "count": len(origin)}, "overlap": rep.to_dict()}
    storage.write_text(args.out, storage.dumps_json(doc))
    print(f"containment={rep.containment_fraction:.4f} jaccard={rep.jaccard_distance:.4f} "
          f"composable={rep.verdict_composable}")
    return 0


def cmd_adapt(args) -> int:
    sc = _scenario(args)
    env = make_env(sc)
    src = Path(args.chain)
    names = _chain_in(src)
    if len(names) < 2:
        raise ProvenanceError(f"{src} holds {len(names)} trained options; need at least two")
    chain = storage.load_chain(src, names, sc.env, sc.option)
    method = AdaptationMethod(args.method)
    seq = adapt_sequence(env, chain, method, sc.train_configs(adapt=True), args.seed, sc.analysis)
    out = Path(args.out)
    for t in seq.chain:
        storage.save_trained(out, t, {"method": method.value})
    comp = complexity_report(seq.outcomes, method.value)
    storage.emit_report(out / "adaptation.json", complexity=[comp],
                        extra={"method": method.value, "seed": args.seed,
                               "outcomes": [o.to_dict() for o in seq.outcomes]})
    for o in seq.outcomes:
        state = "skipped" if o.skipped else f"converged={o.converged} steps={o.steps_used}"
        print(f"{o.pair[0]} -> {o.pair[1]}: {state}")
    print(f"total adaptation steps: {comp.total_steps}")
    return 0


def cmd_evaluate(args) -> int:
    sc = _scenario(args)
    env = make_env(sc)
    names = _names(args.chain)
    chain = storage.load_chain(args.policies, names, sc.env, sc.option)
    base = protocol_for(sc, args.seed)
    protocol = EvalProtocol(args.sets or base.sets, args.episodes or base.episodes_per_set,
                            base.max_steps_per_option, args.seed)
    if args.all_subchains:
        reports = evaluate_all_subchains(env, chain, protocol, args.method, args.threads)
    else:
        reports = [measure_success(env, chain, protocol, args.method, args.threads)]
    storage.emit_report(args.out, success=reports, fmt=args.format)
    for r in reports:
        print(f"{'>'.join(r.chain)}: {r.successes}/{r.episodes} (mean {r.mean:.3f}, std {r.std:.3f})")
    return 0


def cmd_report(args) -> int:
    src = Path(args.input)
    files = sorted(src.glob("*.json")) if src.is_dir() else [src]
    success, complexity = [], []
    for f in files:
        try:
            s, c, _ = storage.load_report(f)
        except (StorageError, KeyError, TypeError):
            continue  # not a report (e.g. trained-option metadata)
        success += s
        complexity += c
    if not success and not complexity:
        raise StorageError(f"no reports found in {src}")
    if args.out:
        storage.emit_report(args.out, success, complexity, args.format)
    else:
        if args.format == "csv":
            text = (storage.success_csv(success) if success else "") + \
                   (("\n" if success else "") + storage.complexity_csv(complexity) if complexity else "")
        elif args.format == "md":
            text = ("## Success\n\n" + storage.success_markdown(success) if success else "") + \
                   ("\n## Training steps\n\n" + storage.complexity_markdown(complexity) if complexity else "")
        else:
            text = storage.dumps_json({"success": [r.to_dict() for r in success],
                                       "complexity": [c.to_dict() for c in complexity]})
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="optseq", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"optseq {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML configuration file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one configuration key")
        sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("train", help="train one option (or all) on its start region")
    common(sp)
    sp.add_argument("--option", required=True, help="option name, comma list, or 'all'")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("sample", help="write an origin or result sample set as CSV")
    common(sp)
    sp.add_argument("--policy", required=True, help="<name>.policy inside a trained-option directory")
    sp.add_argument("--kind", choices=("origin", "result"), required=True)
    sp.add_argument("--n", type=int, default=1000)
    sp.add_argument("--allow-unconverged", action="store_true")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("analyze", help="containment and Jaccard distance between two sample sets")
    common(sp)
    sp.add_argument("--result", required=True)
    sp.add_argument("--origin", required=True)
    sp.add_argument("--eps", type=float)
    sp.add_argument("--voxel", type=float)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("adapt", help="adapt a trained chain with one method")
    common(sp)
    sp.add_argument("--method", choices=[m.value for m in AdaptationMethod], required=True)
    sp.add_argument("--chain", required=True, help="directory of trained options")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_adapt)

    sp = sub.add_parser("evaluate", help="measure chain success over sets of episodes")
    common(sp)
    sp.add_argument("--chain", default=",".join(OPTION_NAMES))
    sp.add_argument("--policies", required=True)
    sp.add_argument("--sets", type=int)
    sp.add_argument("--episodes", type=int)
    sp.add_argument("--method", default="independent", choices=("independent", "origin", "rm-centroid",
                                                                 "rm-density"))
    sp.add_argument("--all-subchains", action="store_true")
    sp.add_argument("--threads", type=int, help="worker threads (default: OPTSEQ_THREADS, 0 = auto)")
    sp.add_argument("--format", choices=("json", "csv", "md"), default="json")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("report", help="combine JSON reports into one table")
    sp.add_argument("--in", dest="input", required=True, help="report file or directory of reports")
    sp.add_argument("--format", choices=("json", "csv", "md"), default="md")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        return int(args.func(args) or 0)
    except OptseqError as exc:
        print(f"optseq: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"optseq: error: {exc}", file=sys.stderr)
        return 4
    except json.JSONDecodeError as exc:
        print(f"optseq: error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
