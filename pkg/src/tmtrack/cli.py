"""Command-line interface: ``tmtrack {synth,train,track,eval,gradcheck,bench}``.

Settings come from, in increasing priority: built-in defaults, a
``--config`` key=value file, ``TM_*`` environment variables, then flags
(``--seed``, ``--iterations`` and repeated ``--set key=value``). Keys are
namespaced by section, e.g. ``train.gamma`` or ``synth.frames``; the
environment form of ``train.gamma`` is ``TM_TRAIN_GAMMA``.
"""
from __future__ import annotations

import argparse
import dataclasses
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import agent as ag
from . import config as cfgmod
from .benchmark import drift_benchmark, drift_training_set, mean_j, swap_events
from .datasets import (SequenceData, SequenceFormatError, SynthConfig, find_sequences, generate_synthetic,
                       load_masks, load_sequence, write_label_png, write_sequence)
from .gradcheck import gradient_check
from .metrics import evaluate_labels, format_report
from .pipeline import (AgentPolicy, ConstantPolicy, OraclePolicy, Tracker, TrackerConfig, TrainConfig,
                       TrainingCurve, run_sequence, train)
from .proposals import DetectorScript, FileProposalProvider, ScriptedDetector, write_proposals
from .template import Action

SECTIONS = {"tracker": TrackerConfig, "train": TrainConfig, "detector": DetectorScript, "synth": SynthConfig}
PROPOSAL_DIR = "proposals"


@dataclasses.dataclass(frozen=True)
class RunConfig:
    tracker: TrackerConfig = TrackerConfig()
    train: TrainConfig = TrainConfig()
    detector: DetectorScript = DetectorScript()
    synth: SynthConfig = SynthConfig(name="synth")
    # derive detector swaps from distractor spawn frames of each sequence
    auto_swaps: bool = False

    def dump(self) -> str:
        lines = [f"auto_swaps={cfgmod.format_value(self.auto_swaps)}\n"]
        for section in SECTIONS:
            for line in cfgmod.dump(getattr(self, section)).splitlines():
                lines.append(f"{section}.{line}\n")
        return "".join(lines)


def known_keys() -> List[str]:
    keys = ["auto_swaps"]
    for section, cls in SECTIONS.items():
        keys.extend(f"{section}.{f.name}" for f in dataclasses.fields(cls) if f.init)
    return keys


def _env_values(environ) -> Dict[str, str]:
    lookup = {k.replace(".", "_"): k for k in known_keys()}
    out = {}
    for name, value in cfgmod.env_overrides(environ).items():
        if name not in lookup:
            raise cfgmod.ConfigError(f"unknown config key in environment: {cfgmod.ENV_PREFIX}{name.upper()}")
        out[lookup[name]] = value
    return out


def build_run_config(values: Dict[str, str]) -> RunConfig:
    known = set(known_keys())
    unknown = sorted(set(values) - known)
    if unknown:
        raise cfgmod.ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    parts = {}
    for section, cls in SECTIONS.items():
        prefix = section + "."
        sub = {k[len(prefix):]: v for k, v in values.items() if k.startswith(prefix)}
        if section == "synth":
            sub.setdefault("name", "synth")
        try:
            parts[section] = cfgmod.build(cls, sub)
        except cfgmod.ConfigError as exc:
            raise cfgmod.ConfigError(f"{section}: {exc}") from None
        except (TypeError, ValueError) as exc:
            raise cfgmod.ConfigError(f"{section}: {exc}") from None
    auto = values.get("auto_swaps", False)
    if isinstance(auto, str):
        auto = cfgmod._coerce(auto, bool, "auto_swaps")
    return RunConfig(auto_swaps=auto, **parts)


def resolve_config(args, environ=os.environ) -> RunConfig:
    values: Dict[str, str] = {}
    if getattr(args, "config", None):
        values.update(cfgmod.read_kv_file(args.config))
    values.update(_env_values(environ))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise cfgmod.ConfigError(f"--set expects key=value, got {item!r}")
        key, value = (p.strip() for p in item.split("=", 1))
        values[key] = value
    if getattr(args, "seed", None) is not None:
        for key in ("synth.seed", "train.seed", "detector.seed"):
            values[key] = str(args.seed)
    if getattr(args, "iterations", None) is not None:
        values["train.iterations"] = str(args.iterations)
    return build_run_config(values)


# -- helpers ------------------------------------------------------------------

def _detector_for(seq: SequenceData, directory: Optional[str], run: RunConfig):
    if directory and os.path.isdir(os.path.join(directory, PROPOSAL_DIR)):
        return FileProposalProvider(os.path.join(directory, PROPOSAL_DIR))
    script = run.detector
    if run.auto_swaps:
        script = dataclasses.replace(script, swaps=swap_events(seq))
    return ScriptedDetector(seq, script)


def _load_dataset(root: str, run: RunConfig, require_gt: bool = True):
    dirs = find_sequences(root)
    if not dirs:
        raise SequenceFormatError(f"{root}: no sequences found")
    out = []
    for d in dirs:
        seq = load_sequence(d, require_gt=require_gt)
        out.append((seq, _detector_for(seq, d, run)))
    return out


def _policy(kind: str, checkpoint: Optional[str], feature_dim: int):
    if kind == "update":
        return ConstantPolicy(Action.UPDATE)
    if kind == "keep":
        return ConstantPolicy(Action.KEEP)
    if kind == "oracle":
        return OraclePolicy()
    if checkpoint is None:
        raise ValueError("--checkpoint is required with --policy agent")
    return AgentPolicy(ag.load_checkpoint(checkpoint, feature_dim=feature_dim))


def _track_one(job):
    directory, out_dir, run, policy_kind, checkpoint = job
    seq = load_sequence(directory, require_gt=False)
    tracker = Tracker(_detector_for(seq, directory, run), _policy(policy_kind, checkpoint, run.tracker.feature_dim),
                      run.tracker)
    gt = (lambda k, t: seq.gt_mask(k, t)) if policy_kind == "oracle" else None
    result = run_sequence(seq.frames, seq.first_boxes, tracker, gt=gt)
    dest = os.path.join(out_dir, seq.name)
    os.makedirs(os.path.join(dest, "masks"), exist_ok=True)
    for t in range(len(seq)):
        write_label_png(os.path.join(dest, "masks", f"{t:05d}.png"), result.render_labels(t))
    with open(os.path.join(dest, "diagnostics.jsonl"), "w") as fh:
        fh.write(result.diagnostics_text())
    # wall-clock phase totals; the only output that varies between runs
    with open(os.path.join(dest, "timings.tsv"), "w") as fh:
        fh.write("".join(f"{k}\t{v:.6f}\n" for k, v in result.timings.items()))
    with open(os.path.join(dest, "confidences.txt"), "w") as fh:
        fh.write("frame\t" + "\t".join(str(k + 1) for k in result.ids) + "\n")
        for t, row in enumerate(result.confidences):
            fh.write(f"{t}\t" + "\t".join(repr(float(c)) for c in row) + "\n")
    return seq.name, len(seq), result.wall_time


def _map(fn, jobs: Sequence, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def _read_confidences(path: str):
    if not os.path.exists(path):
        return None
    with open(path) as fh:
        rows = fh.read().splitlines()[1:]
    return [[float(v) for v in row.split("\t")[1:]] for row in rows if row]


def _eval_one(job):
    pred_dir, gt_dir, tol = job
    gt = load_masks(gt_dir)
    pred = load_masks(pred_dir)
    ids = sorted(int(v) for v in np.unique(gt[0]) if v != 0)
    conf = _read_confidences(os.path.join(pred_dir, "confidences.txt"))
    return evaluate_labels(os.path.basename(os.path.normpath(gt_dir)), pred, gt, ids, conf, tol)


# -- commands -----------------------------------------------------------------

def cmd_synth(args, run: RunConfig) -> int:
    if args.out is None:
        raise ValueError("--out is required")
    os.makedirs(args.out, exist_ok=True)
    for i in range(args.sequences):
        cfg = run.synth if args.sequences == 1 else dataclasses.replace(
            run.synth, name=f"{run.synth.name}{i:02d}", seed=run.synth.seed + i)
        seq = generate_synthetic(cfg)
        dest = os.path.join(args.out, cfg.name)
        write_sequence(seq, dest, overwrite=args.overwrite)
        if args.proposals:
            script = dataclasses.replace(run.detector, swaps=swap_events(seq)) if run.auto_swaps else run.detector
            det = ScriptedDetector(seq, script)
            for t, frame in enumerate(seq.frames):
                write_proposals(os.path.join(dest, PROPOSAL_DIR), t, det.detect_full_frame(frame, t),
                                seq.width, seq.height)
        print(f"wrote {dest} ({len(seq)} frames, {len(seq.objects)} objects)")
    with open(os.path.join(args.out, "config.txt"), "w") as fh:
        fh.write(run.dump())
    return 0


def cmd_train(args, run: RunConfig) -> int:
    if args.data is None or args.out is None:
        raise ValueError("--data and --out are required")
    dataset = _load_dataset(args.data, run, require_gt=True)
    tcfg = run.train
    net = ag.AgentNet(run.tracker.feature_dim, tcfg.hidden, tcfg.actor_lr, tcfg.critic_lr, tcfg.lr_decay,
                      tcfg.decay_every, seed=tcfg.seed)
    if tcfg.iterations > 0:
        net, curve = train(dataset, net, run.tracker, tcfg)
        curve_text = curve.text()
    else:
        curve_text = TrainingCurve().text()
    ag.save_checkpoint(net, args.out)
    with open(args.out + ".curve.tsv", "w") as fh:
        fh.write(curve_text)
    with open(args.out + ".config.txt", "w") as fh:
        fh.write(run.dump())
    print(f"wrote {args.out} after {net.iteration} transitions")
    return 0


def cmd_track(args, run: RunConfig) -> int:
    if args.data is None or args.out is None:
        raise ValueError("--data and --out are required")
    dirs = find_sequences(args.data)
    if not dirs:
        raise SequenceFormatError(f"{args.data}: no sequences found")
    if args.policy == "agent":
        # fail before spawning workers
        _policy(args.policy, args.checkpoint, run.tracker.feature_dim)
    jobs = [(d, args.out, run, args.policy, args.checkpoint) for d in dirs]
    os.makedirs(args.out, exist_ok=True)
    for name, frames, wall in _map(_track_one, jobs, args.jobs):
        print(f"{name}\t{frames} frames\t{frames / wall if wall else float('inf'):.1f} fps")
    with open(os.path.join(args.out, "config.txt"), "w") as fh:
        fh.write(run.dump())
    return 0


def cmd_eval(args, run: RunConfig) -> int:
    if args.pred is None or args.gt is None:
        raise ValueError("--pred and --gt are required")
    gt_dirs = find_sequences(args.gt)
    if not gt_dirs:
        raise SequenceFormatError(f"{args.gt}: no sequences found")
    jobs = []
    for g in gt_dirs:
        name = os.path.basename(os.path.normpath(g))
        p = args.pred if len(gt_dirs) == 1 and os.path.isdir(os.path.join(args.pred, "masks")) \
            else os.path.join(args.pred, name)
        if not os.path.isdir(os.path.join(p, "masks")):
            raise SequenceFormatError(f"{p}: no predicted masks for sequence {name}")
        jobs.append((p, g, args.tol))
    report = format_report(_map(_eval_one, jobs, args.jobs))
    sys.stdout.write(report)
    out = args.out or os.path.join(args.pred, "report.tsv")
    with open(out, "w") as fh:
        fh.write(report)
    return 0


def cmd_gradcheck(args, run: RunConfig) -> int:
    seed = 0 if args.seed is None else args.seed
    report = gradient_check(seed=seed, pairs=args.pairs, per_array=args.per_array, corrupt=args.corrupt)
    print(f"actor max relative error\t{report.actor_error:.3e}")
    print(f"critic max relative error\t{report.critic_error:.3e}")
    print(f"coordinates checked\t{report.checked}")
    ok = report.passed()
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def cmd_bench(args, run: RunConfig) -> int:
    dataset = drift_benchmark()
    rows = [("update", lambda: ConstantPolicy(Action.UPDATE)), ("keep", lambda: ConstantPolicy(Action.KEEP)),
            ("oracle", OraclePolicy)]
    net = None
    if args.checkpoint:
        net = ag.load_checkpoint(args.checkpoint, feature_dim=run.tracker.feature_dim)
    elif args.train:
        tcfg = run.train
        net = ag.AgentNet(run.tracker.feature_dim, tcfg.hidden, tcfg.actor_lr, tcfg.critic_lr, tcfg.lr_decay,
                          tcfg.decay_every, seed=tcfg.seed)
        start = time.perf_counter()
        net, _ = train(drift_training_set(), net, run.tracker, tcfg)
        print(f"trained {net.iteration} transitions in {time.perf_counter() - start:.0f}s")
        if args.out:
            ag.save_checkpoint(net, args.out)
    if net is not None:
        rows.append(("agent", lambda: AgentPolicy(net)))
    for name, factory in rows:
        print(f"{name}\t{mean_j(dataset, factory, run.tracker):.6f}")
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "track": cmd_track, "eval": cmd_eval,
            "gradcheck": cmd_gradcheck, "bench": cmd_bench}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value settings file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one setting (repeatable)")
    common.add_argument("--seed", type=int, help="seed for data, detector and training")
    common.add_argument("--jobs", type=int, default=1, help="worker processes (results do not depend on it)")
    common.add_argument("--out", help="output path")

    parser = argparse.ArgumentParser(prog="tmtrack", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic sequences")
    p.add_argument("--sequences", type=int, default=1)
    p.add_argument("--proposals", action="store_true", help="also write detector proposals")
    p.add_argument("--overwrite", action="store_true")

    p = sub.add_parser("train", parents=[common], help="train the decision agent")
    p.add_argument("--data", help="sequence directory or a directory of sequences")
    p.add_argument("--iterations", type=int, help="transition budget")

    p = sub.add_parser("track", parents=[common], help="track sequences and write label maps")
    p.add_argument("--data")
    p.add_argument("--checkpoint")
    p.add_argument("--policy", choices=["agent", "update", "keep", "oracle"], default="agent")

    p = sub.add_parser("eval", parents=[common], help="score predicted label maps")
    p.add_argument("--pred")
    p.add_argument("--gt")
    p.add_argument("--tol", type=float, help="contour tolerance in pixels")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    p.add_argument("--pairs", type=int, default=10)
    p.add_argument("--per-array", type=int, default=64)
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)

    p = sub.add_parser("bench", parents=[common], help="mean J on the drift benchmark")
    p.add_argument("--train", action="store_true", help="train on the drift training set first (--out saves it)")
    p.add_argument("--checkpoint")
    return parser


def main(argv: Optional[Sequence[str]] = None, environ=os.environ) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        run = resolve_config(args, environ)
        return COMMANDS[args.command](args, run)
    except (cfgmod.ConfigError, SequenceFormatError, ag.CheckpointError, ValueError, OSError) as exc:
        print(f"tmtrack {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
