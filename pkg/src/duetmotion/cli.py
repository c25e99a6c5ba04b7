"""duet: one command-line entry point over the whole toolkit.

Subcommands cover the full loop: synthesize raw motions, extract anchored
clips, train the two models, sample from them (separately or composed), score
generated sets, and export world-space joints for plotting. Every stochastic
command takes a mandatory --seed and is deterministic given it; every
artifact written embeds {config_hash, seed, toolkit_version}.

Failures exit nonzero with one JSON error object on stderr; the code tells
the class apart: 3 checkpoint problems, 4 motion-file problems, 5 config
problems, 1 anything else. DUET_OUTPUT_ROOT relocates relative output paths
(and only outputs); inputs resolve as given.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import os
import sys
import warnings
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .body_model import forward_kinematics, default_tree
from .config import ConfigError, RunConfig
from .interaction_data import (
    MotionFileError,
    MotionSequence,
    SynthParams,
    canonicalize,
    extract_clips,
    read_clip,
    read_motion,
    read_pose_pair,
    synth_dataset,
    write_clip,
    write_motion,
    write_pose_pair,
)
from .metrics import (
    MetricReport,
    autoencoder_checkpoint,
    contact_ratio,
    diversity,
    frechet_from_stats,
    gaussian_stats,
    load_autoencoder,
    mmodality,
    penetration,
    precision_recall,
    train_autoencoder,
)
from .pose_animator import animate, load_animator, load_checkpoint, save_checkpoint, train_animator
from .pose_generator import generate_interactive_pose, load_generator, targets_from_clips, train_generator

EXIT_FAILURE = 1
EXIT_CHECKPOINT = 3
EXIT_MOTION = 4
EXIT_CONFIG = 5

OUTPUT_ROOT_ENV = "DUET_OUTPUT_ROOT"


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code = code
        self.kind = kind


# =============================================================================
# plumbing
# =============================================================================


def _out_path(raw: str) -> Path:
    path = Path(raw)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _out_dir(raw: str) -> Path:
    path = Path(raw)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_config(path: str | None) -> RunConfig:
    return RunConfig.from_file(path) if path else RunConfig()


def _meta(cfg: RunConfig, seed: int | None) -> dict:
    return {"config_hash": cfg.config_hash(), "seed": seed, "toolkit_version": __version__}


def _load_ckpt(raw: str) -> dict:
    path = Path(raw)
    if not path.exists():
        raise CliError(EXIT_CHECKPOINT, "missing-checkpoint", f"checkpoint not found: {path}")
    try:
        return load_checkpoint(path)
    except Exception as e:
        raise CliError(EXIT_CHECKPOINT, "bad-checkpoint", f"cannot load {path}: {e}") from None


def _load_model(raw: str, loader):
    ckpt = _load_ckpt(raw)
    try:
        return loader(ckpt)
    except ValueError as e:
        raise CliError(EXIT_CHECKPOINT, "bad-checkpoint", str(e)) from None


def _motion_files(raw: str) -> list[Path]:
    d = Path(raw)
    if not d.is_dir():
        raise CliError(EXIT_MOTION, "missing-input", f"not a directory: {d}")
    files = sorted(d.glob("*.json"))
    if not files:
        raise CliError(EXIT_MOTION, "missing-input", f"no .json motion files in {d}")
    return files


def _read_any_sequence(path: Path) -> MotionSequence:
    """Accept both clip files (with anchor_index) and plain motions."""
    try:
        return read_clip(path).sequence
    except MotionFileError:
        return read_motion(path)


def _torch_rng(seed: int) -> torch.Generator:
    return torch.Generator().manual_seed(seed)


# =============================================================================
# commands
# =============================================================================


def cmd_synth(args) -> int:
    cfg = _load_config(args.config)
    params = SynthParams(
        count=args.count, length=args.length, fps=cfg.extraction.fps,
        noise_std=args.noise_std, beta_std=args.beta_std,
    )
    outdir = _out_dir(args.out)
    meta = _meta(cfg, args.seed)
    for i, seq in enumerate(synth_dataset(params, args.seed)):
        write_motion(outdir / f"motion_{i:04d}.json", seq, meta=meta)
    print(f"wrote {args.count} motions to {outdir}")
    return 0


def cmd_extract(args) -> int:
    cfg = _load_config(args.config)
    ecfg = cfg.extraction_config()
    outdir = _out_dir(args.out)
    meta = _meta(cfg, None)
    count = 0
    for path in _motion_files(args.motions):
        for clip in extract_clips(read_motion(path), ecfg):
            write_clip(outdir / f"clip_{count:04d}.json", canonicalize(clip), meta=meta)
            count += 1
    print(f"extracted {count} clips to {outdir}")
    return 0


def _read_clips(raw: str):
    return [read_clip(p) for p in _motion_files(raw)]


def cmd_train_animator(args) -> int:
    cfg = _load_config(args.config)
    acfg = cfg.animator_config()
    if args.steps is not None:
        acfg.train_steps = args.steps
    ckpt = train_animator(_read_clips(args.clips), acfg, _torch_rng(args.seed), log_every=args.log_every)
    ckpt["meta"] = _meta(cfg, args.seed)
    save_checkpoint(_out_path(args.out), ckpt)
    print(f"animator: loss {ckpt['initial_loss']:.4f} -> {ckpt['final_loss']:.4f}, saved {args.out}")
    return 0


def cmd_train_generator(args) -> int:
    cfg = _load_config(args.config)
    gcfg = cfg.generator_config()
    if args.steps is not None:
        gcfg.train_steps = args.steps
    targets = targets_from_clips(_read_clips(args.clips))
    ckpt = train_generator(targets, gcfg, _torch_rng(args.seed), log_every=args.log_every)
    ckpt["meta"] = _meta(cfg, args.seed)
    save_checkpoint(_out_path(args.out), ckpt)
    print(f"generator: loss {ckpt['initial_loss']:.4f} -> {ckpt['final_loss']:.4f}, saved {args.out}")
    return 0


def cmd_animate(args) -> int:
    cfg = _load_config(args.config)
    model = _load_model(args.checkpoint, load_animator)
    pose_a, pose_b, shape_a, shape_b, text = read_pose_pair(args.pair)
    motion = animate(
        (pose_a, pose_b), (shape_a, shape_b), args.index,
        model.cfg.num_frames, model, _torch_rng(args.seed), eta=args.eta,
    )
    motion.text = text
    write_motion(_out_path(args.out), motion, meta=_meta(cfg, args.seed))
    print(f"animated {len(motion)} frames (anchor at {args.index}) to {args.out}")
    return 0


def cmd_generate(args) -> int:
    cfg = _load_config(args.config)
    model = _load_model(args.checkpoint, load_generator)
    pose_a = shape_a = None
    if args.pair:
        pose_a, _, shape_a, _, _ = read_pose_pair(args.pair)
    pair = generate_interactive_pose(
        model, _torch_rng(args.seed), pose_a=pose_a, shape_a=shape_a, text=args.text, eta=args.eta
    )
    meta = _meta(cfg, args.seed)
    meta["ik_residual_a"] = pair.ik_a.residual
    meta["ik_residual_b"] = pair.ik_b.residual
    write_pose_pair(
        _out_path(args.out), pair.pose_a, pair.pose_b, pair.shape_a, pair.shape_b,
        text=args.text, meta=meta,
    )
    print(f"generated pose pair to {args.out}")
    return 0


def cmd_text2interaction(args) -> int:
    # the Fig.-2 composition: sample an interactive pose, then animate around it
    cfg = _load_config(args.config)
    generator = _load_model(args.generator, load_generator)
    animator = _load_model(args.animator, load_animator)
    rng = _torch_rng(args.seed)
    pair = generate_interactive_pose(generator, rng, text=args.text, eta=args.eta)
    motion = animate(
        (pair.pose_a, pair.pose_b), (pair.shape_a, pair.shape_b), args.index,
        animator.cfg.num_frames, animator, rng, eta=args.eta,
    )
    motion.text = args.text
    write_motion(_out_path(args.out), motion, meta=_meta(cfg, args.seed))
    print(f"text2interaction: {len(motion)} frames for {args.text!r} to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args.config)
    mcfg = cfg.metrics
    real = [_read_any_sequence(p) for p in _motion_files(args.real)]
    gen = [_read_any_sequence(p) for p in _motion_files(args.gen)]
    lengths = {len(s) for s in real} | {len(s) for s in gen}
    if len(lengths) != 1:
        raise CliError(EXIT_MOTION, "malformed-motion",
                       f"all motions must share one frame count, got {sorted(lengths)}")

    if args.ae:
        extractor = _load_model(args.ae, load_autoencoder)
        ae_source = args.ae
    else:
        extractor, _ = train_autoencoder(real, cfg.autoencoder_config(), _torch_rng(args.seed))
        ae_source = "trained-on-real"
        if args.save_ae:
            save_checkpoint(_out_path(args.save_ae), autoencoder_checkpoint(extractor))

    feats_real = extractor.encode(real)
    feats_gen = extractor.encode(gen)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # flag lands in the report instead
        fres = frechet_from_stats(*gaussian_stats(feats_real), *gaussian_stats(feats_gen))
    prec, rec = precision_recall(feats_real, feats_gen, k=mcfg.knn_k)
    np_rng = np.random.default_rng(args.seed)
    div = diversity(feats_gen, mcfg.diversity_pairs, np_rng)

    by_text: dict[str, list[int]] = {}
    for i, seq in enumerate(gen):
        if seq.text:
            by_text.setdefault(seq.text, []).append(i)
    sets = [feats_gen[idx] for idx in by_text.values() if len(idx) >= 2]
    mm = mmodality(sets, mcfg.mmodality_pairs, np_rng) if sets else None

    report = MetricReport(
        fid=fres.value,
        precision=prec,
        recall=rec,
        diversity=div,
        contact_ratio=float(np.mean([contact_ratio(s, mcfg.contact_threshold) for s in gen])),
        penetration=float(np.mean([penetration(s) for s in gen])),
        mmodality=mm,
        fid_regularized=fres.regularized,
        num_real=len(real),
        num_gen=len(gen),
        seed=args.seed,
        extra={"config_hash": cfg.config_hash(), "toolkit_version": __version__,
               "ae_source": ae_source, "knn_k": mcfg.knn_k},
    )
    _out_path(args.report).write_text(report.to_json())
    print(f"fid {report.fid:.4f}  precision {prec:.3f}  recall {rec:.3f}  "
          f"contact {report.contact_ratio:.1f}%  report -> {args.report}")
    return 0


@dataclasses.dataclass
class ExportFrameSet:
    """World joint positions per frame for both persons, plus metadata."""

    joint_names: list[str]
    joints_a: np.ndarray  # (N, 22, 3)
    joints_b: np.ndarray  # (N, 22, 3)
    fps: float
    meta: dict

    def __post_init__(self):
        j = len(self.joint_names)
        if self.joints_a.shape[1:] != (j, 3) or self.joints_b.shape != self.joints_a.shape:
            raise ValueError("joint arrays must be (N, num_joints, 3) for both persons")

    def to_json(self) -> str:
        return json.dumps({
            "version": 1,
            "fps": self.fps,
            "num_frames": int(self.joints_a.shape[0]),
            "joint_names": self.joint_names,
            "joints_a": self.joints_a.tolist(),
            "joints_b": self.joints_b.tolist(),
            "meta": self.meta,
        })

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["frame", "person", "joint", "joint_name", "x", "y", "z"])
        for person, joints in (("a", self.joints_a), ("b", self.joints_b)):
            for f in range(joints.shape[0]):
                for j, name in enumerate(self.joint_names):
                    writer.writerow([f, person, j, name, *(repr(float(v)) for v in joints[f, j])])
        return buf.getvalue()


def export_frames(motion: MotionSequence, meta: dict, tree=None) -> ExportFrameSet:
    tree = tree or default_tree()
    ja = np.stack([forward_kinematics(p, motion.shape_a, tree) for p in motion.poses_a])
    jb = np.stack([forward_kinematics(p, motion.shape_b, tree) for p in motion.poses_b])
    return ExportFrameSet(list(tree.joint_names), ja, jb, motion.fps, meta)


def cmd_export(args) -> int:
    cfg = _load_config(args.config)
    motion = _read_any_sequence(Path(args.motion))
    frames = export_frames(motion, _meta(cfg, None))
    out = _out_path(args.out)
    out.write_text(frames.to_json() if args.format == "json" else frames.to_csv())
    print(f"exported {len(motion)} frames as {args.format} to {out}")
    return 0


# =============================================================================
# argument wiring
# =============================================================================


def _add_common(sub, seed: bool):
    sub.add_argument("--config", help="JSON run-config file (defaults are pinned)")
    if seed:
        sub.add_argument("--seed", type=int, required=True, help="RNG seed (mandatory)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="duet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"duet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic two-person motion dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--length", type=int, default=90)
    p.add_argument("--noise-std", type=float, default=0.02)
    p.add_argument("--beta-std", type=float, default=0.5)
    _add_common(p, seed=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="extract canonicalized contact-anchored clips")
    p.add_argument("--motions", required=True)
    p.add_argument("--out", required=True)
    _add_common(p, seed=False)
    p.set_defaults(func=cmd_extract)

    for name, fn in (("train-animator", cmd_train_animator), ("train-generator", cmd_train_generator)):
        p = sub.add_parser(name, help=f"{name.replace('-', ' ')} on a clip directory")
        p.add_argument("--clips", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--steps", type=int, help="override optimizer.train_steps")
        p.add_argument("--log-every", type=int, default=0)
        _add_common(p, seed=True)
        p.set_defaults(func=fn)

    p = sub.add_parser("animate", help="sample a motion around an anchor pose pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pair", required=True, help="pose-pair file providing the anchor")
    p.add_argument("--index", type=int, default=0, help="frame index the anchor occupies")
    p.add_argument("--eta", type=float, default=0.0)
    p.add_argument("--out", required=True)
    _add_common(p, seed=True)
    p.set_defaults(func=cmd_animate)

    p = sub.add_parser("generate", help="sample an interactive pose pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--text", help="optional text prompt")
    p.add_argument("--pair", help="condition on person a of this pose-pair file")
    p.add_argument("--eta", type=float, default=0.0)
    p.add_argument("--out", required=True)
    _add_common(p, seed=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("text2interaction", help="generate a pose pair, then animate it")
    p.add_argument("--generator", required=True)
    p.add_argument("--animator", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--eta", type=float, default=0.0)
    p.add_argument("--out", required=True)
    _add_common(p, seed=True)
    p.set_defaults(func=cmd_text2interaction)

    p = sub.add_parser("evaluate", help="score a generated set against a real set")
    p.add_argument("--real", required=True)
    p.add_argument("--gen", required=True)
    p.add_argument("--ae", help="feature-autoencoder checkpoint; trained on --real when omitted")
    p.add_argument("--save-ae", help="where to store the autoencoder trained on the fly")
    p.add_argument("--report", required=True)
    _add_common(p, seed=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export", help="export world joint positions for plotting")
    p.add_argument("--motion", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    _add_common(p, seed=False)
    p.set_defaults(func=cmd_export)

    return parser


def _fail(code: int, kind: str, message: str) -> int:
    print(json.dumps({"error": {"code": code, "kind": kind, "message": message}}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        return _fail(e.code, e.kind, str(e))
    except ConfigError as e:
        return _fail(EXIT_CONFIG, "invalid-config", str(e))
    except MotionFileError as e:
        return _fail(EXIT_MOTION, "malformed-motion", str(e))
    except FileNotFoundError as e:
        return _fail(EXIT_MOTION, "missing-input", str(e))
    except (ValueError, RuntimeError, FloatingPointError) as e:
        return _fail(EXIT_FAILURE, type(e).__name__.lower(), str(e))


if __name__ == "__main__":
    sys.exit(main())
