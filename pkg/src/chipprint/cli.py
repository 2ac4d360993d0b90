"""Command line front end.

Five subcommands cover the pipeline end to end:

    chipprint simulate --out data --seed 7
    chipprint ingest scans --out data
    chipprint enroll data/chip00/clip00 --out prints
    chipprint verify prints/chip00_clip00.fp prints/chip00_clip01.fp
    chipprint evaluate data --stat trobust --sweep masking

Exit codes form a stable contract:

    0   success; for `verify`, the pair was accepted
    1   `verify` rejected the pair
    2   registration could not lock onto the template
    3   mask construction failed (nothing usable left)
    4   fingerprints are incompatible (different point budget N)
    64  command line usage error
    65  input data is missing, unreadable or malformed
    70  unexpected internal error

All outputs land under the --out directory (default from the config);
nothing else on disk is touched. Runs are deterministic: the same
command with the same inputs and seed writes byte-identical files.
`CHIPPRINT_THREADS` caps worker threads (default: one per CPU).
"""

import argparse
import csv
import io
import json
import os
import shutil
import sys
import traceback
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache

import numpy as np

from .config import PipelineConfig, apply_overrides, config_snapshot, load_config
from .errors import (
    AlignmentFailedError,
    ChipprintError,
    FormatError,
    IncompatibleFingerprintsError,
    MaskError,
    ParameterError,
)
from .evaluation import bootstrap_scores, build_report, eer_empirical
from .formats import (
    PGM_MAXVAL,
    load_clip,
    read_fingerprint,
    read_normmap,
    read_pgm,
    write_density_csv,
    write_fingerprint,
    write_report,
)
from .model import VideoClip
from .pipeline import (
    MASK_ARMS,
    Benchmark,
    CountView,
    FeatureClip,
    estimate_alignment,
    featurize_frames,
    mask_arms,
)
from .registration import warp_frame
from .specular import fingerprint_from_clip, score_bundle
from .simulate import simulate_dataset

EXIT_OK = 0
EXIT_REJECT = 1
EXIT_ALIGNMENT = 2
EXIT_MASK = 3
EXIT_INCOMPATIBLE = 4
EXIT_USAGE = 64
EXIT_DATA = 65
EXIT_INTERNAL = 70

STAT_KINDS = ("srm", "tmax", "trobust", "maxcorr", "diffuse")
SWEEP_KINDS = ("frames", "points", "masking", "seeds")
FRAME_SWEEP_COUNTS = (1, 2, 5, 10, 15, 20)
POINT_SWEEP_BUDGETS = (50, 100, 150, 200)


def thread_count() -> int:
    """Worker cap from CHIPPRINT_THREADS, else one per CPU."""
    raw = os.environ.get("CHIPPRINT_THREADS", "").strip()
    if not raw:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ParameterError(f"CHIPPRINT_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ParameterError(f"CHIPPRINT_THREADS must be >= 1, got {n}")
    return n


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; the contract says 64."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _seed_arg(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}")
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _add_common(p, out_help: str):
    p.add_argument("--config", metavar="PATH", default=None, help="TOML config file; flags override its values")
    p.add_argument("--seed", metavar="U64", type=_seed_arg, default=None, help="seed override (default: evaluation.base_seed)")
    p.add_argument("--out", metavar="DIR", default=None, help=out_help)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="chipprint", description="Surface-texture authentication for IC chip packages.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("simulate", help="render a synthetic dataset to disk")
    _add_common(p, "dataset directory (default: paths.out_dir)")
    p.add_argument("--chips", type=int, default=8, help="number of chips (default 8)")
    p.add_argument("--clips", type=int, default=3, help="capture clips per chip (default 3)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ingest", help="normalize a directory tree of PGM captures into a dataset")
    p.add_argument("src", help="source tree: one directory per chip with template.pgm and clip subdirectories")
    _add_common(p, "dataset directory to write (default: paths.out_dir)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("enroll", help="extract a fingerprint from one captured clip")
    p.add_argument("clip_dir", help="clip directory (PGM frames plus clip.json)")
    p.add_argument("--template", metavar="PGM", default=None, help="registration template (default: <clip_dir>/../template.pgm)")
    _add_common(p, "fingerprint directory (default: paths.out_dir)")
    p.set_defaults(func=cmd_enroll)

    p = sub.add_parser("verify", help="compare two fingerprints and accept or reject")
    p.add_argument("test", help="fingerprint file under test")
    p.add_argument("reference", help="enrolled reference fingerprint file")
    p.add_argument("--config", metavar="PATH", default=None, help="TOML config file; flags override its values")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("evaluate", help="score all clip pairs of a dataset and report error rates")
    p.add_argument("dataset", help="dataset directory with manifest.json")
    _add_common(p, "report directory (default: paths.out_dir)")
    p.add_argument("--stat", choices=STAT_KINDS, default="trobust", help="statistic to evaluate (default trobust)")
    p.add_argument("--sweep", choices=SWEEP_KINDS, default=None, help="also sweep one axis and write a CSV of EERs")
    p.set_defaults(func=cmd_evaluate)

    return parser


def resolve_config(args) -> PipelineConfig:
    cfg = load_config(getattr(args, "config", None))
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["evaluation.base_seed"] = args.seed
    if getattr(args, "out", None):
        overrides["paths.out_dir"] = args.out
    return apply_overrides(cfg, overrides) if overrides else cfg


# ----------------------------------------------------------- subcommands


def cmd_simulate(args) -> int:
    cfg = resolve_config(args)
    out_dir = cfg.paths.out_dir
    seed = cfg.evaluation.base_seed
    if args.chips < 1 or args.clips < 1:
        raise ParameterError("need at least one chip and one clip per chip")
    manifest = simulate_dataset(cfg, args.chips, args.clips, out_dir, seed)
    print(f"wrote {len(manifest['chips'])} chips x {args.clips} clips to {out_dir} (seed {seed})")
    return EXIT_OK


def cmd_ingest(args) -> int:
    """Copy a tree of raw PGM captures into dataset layout.

    Expected source layout: SRC/<chip>/template.pgm plus one
    subdirectory of .pgm frames per clip. Frame JSON sidecars are
    carried over when present and synthesized otherwise, so the result
    is readable by `enroll` and `evaluate` like a simulated dataset.
    """
    cfg = resolve_config(args)
    out_dir = cfg.paths.out_dir
    src = args.src
    if not os.path.isdir(src):
        raise FormatError(f"source {src} is not a directory")

    chips = []
    frame_counts = set()
    for chip_name in sorted(os.listdir(src)):
        chip_src = os.path.join(src, chip_name)
        if not os.path.isdir(chip_src):
            continue
        template_src = os.path.join(chip_src, "template.pgm")
        if not os.path.isfile(template_src):
            raise FormatError(f"chip directory {chip_src} has no template.pgm")
        read_pgm(template_src)  # validate before copying
        chip_out = os.path.join(out_dir, chip_name)
        os.makedirs(chip_out, exist_ok=True)
        shutil.copyfile(template_src, os.path.join(chip_out, "template.pgm"))

        clip_entries = []
        for clip_name in sorted(os.listdir(chip_src)):
            clip_src_dir = os.path.join(chip_src, clip_name)
            if not os.path.isdir(clip_src_dir):
                continue
            pgms = sorted(f for f in os.listdir(clip_src_dir) if f.endswith(".pgm"))
            if not pgms:
                continue  # stray directory, not a clip
            clip_out_dir = os.path.join(chip_out, clip_name)
            os.makedirs(clip_out_dir, exist_ok=True)
            names = []
            for t, pgm_name in enumerate(pgms):
                read_pgm(os.path.join(clip_src_dir, pgm_name))
                dst_name = f"frame_{t:04d}.pgm"
                shutil.copyfile(os.path.join(clip_src_dir, pgm_name), os.path.join(clip_out_dir, dst_name))
                sidecar = os.path.join(clip_src_dir, pgm_name + ".json")
                if os.path.isfile(sidecar):
                    with open(sidecar) as fh:
                        try:
                            meta = json.load(fh)
                        except json.JSONDecodeError as e:
                            raise FormatError(f"bad frame metadata {sidecar}: {e}") from e
                else:
                    # No capture metadata: frame order stands in for time
                    # and the light pose is marked unknown-but-overhead.
                    meta = {"t": t, "light_position": [0.0, 0.0, 1.0], "light_kind": "point"}
                with open(os.path.join(clip_out_dir, dst_name + ".json"), "w") as fh:
                    json.dump(meta, fh, sort_keys=True)
                    fh.write("\n")
                names.append(dst_name)
            clip_manifest = {
                "chip_id": chip_name,
                "clip_id": clip_name,
                "frame_count": len(names),
                "frames": names,
                "gain": None,
            }
            with open(os.path.join(clip_out_dir, "clip.json"), "w") as fh:
                json.dump(clip_manifest, fh, indent=2, sort_keys=True)
                fh.write("\n")
            frame_counts.add(len(names))
            clip_entries.append({"clip_id": clip_name, "dir": f"{chip_name}/{clip_name}", "normmap": None})
        if not clip_entries:
            raise FormatError(f"chip directory {chip_src} has no clip directories with PGM frames")
        chips.append(
            {
                "chip_id": chip_name,
                "dir": chip_name,
                "height": None,
                "template": f"{chip_name}/template.pgm",
                "clips": clip_entries,
            }
        )
    if not chips:
        raise FormatError(f"source {src} contains no chip directories")

    manifest = {
        "dataset": "chipprint-ingest",
        "seed": None,
        "gain": None,
        "frame_count": max(frame_counts),
        "config": config_snapshot(cfg),
        "chips": chips,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    n_clips = sum(len(c["clips"]) for c in chips)
    print(f"ingested {len(chips)} chips, {n_clips} clips into {out_dir}")
    return EXIT_OK


def _read_template(path) -> np.ndarray:
    """Template image as float32 on the same scale load_clip uses."""
    return read_pgm(path).astype(np.float32) / PGM_MAXVAL


def cmd_enroll(args) -> int:
    cfg = resolve_config(args)
    clip = load_clip(args.clip_dir)
    template_path = args.template
    if template_path is None:
        template_path = os.path.join(os.path.dirname(os.path.abspath(args.clip_dir)), "template.pgm")
    template = _read_template(template_path)

    masks = mask_arms(template, cfg, arms=("both",))
    alignment = estimate_alignment(clip.frames[0].pixels, template, cfg)
    aligned = [warp_frame(f, alignment.transform) for f in clip.frames]
    aligned_clip = VideoClip(frames=aligned, chip_id=clip.chip_id, clip_id=clip.clip_id)
    fp = fingerprint_from_clip(
        aligned_clip,
        masks["both"],
        n_points=cfg.specular.n_points,
        count=cfg.specular.sample_count,
        seed=cfg.evaluation.base_seed,
    )
    out_dir = cfg.paths.out_dir
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{fp.chip_id}_{fp.clip_id}.fp")
    write_fingerprint(path, fp)
    print(f"{path}: {fp.frame_count} frames x {fp.n_points} points (peak {alignment.peak_response:.3f})")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = resolve_config(args)
    test = read_fingerprint(args.test)
    reference = read_fingerprint(args.reference)
    bundle = score_bundle(test, reference, tau=cfg.specular.tau)
    accept = bundle.t_robust > cfg.specular.threshold
    print(f"t_robust   {bundle.t_robust:.4f}")
    print(f"t_max      {bundle.t_max:.4f}")
    print(f"zero_ratio {bundle.zero_ratio:.4f}")
    print(f"decision   {'accept' if accept else 'reject'} (threshold {cfg.specular.threshold:g})")
    return EXIT_OK if accept else EXIT_REJECT


# ------------------------------------------------------------- evaluate


def _load_manifest(dataset_dir) -> dict:
    path = os.path.join(dataset_dir, "manifest.json")
    try:
        with open(path) as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"unreadable dataset manifest {path}: {e}") from e
    if not isinstance(manifest.get("chips"), list) or not manifest["chips"]:
        raise FormatError(f"dataset manifest {path} lists no chips")
    return manifest


def _featurize_dataset(dataset_dir, manifest, cfg, arms, n_points=None, threads=1):
    """Featurize every clip of a dataset from disk.

    Returns (clips, mask_of_chip, dims) ready for Benchmark; masks are
    stored for the primary (first) arm, matching build_benchmark.
    """
    clips: list[FeatureClip] = []
    mask_of_chip = {}
    dims = None
    for chip in manifest["chips"]:
        template = _read_template(os.path.join(dataset_dir, chip["template"]))
        dims = template.shape
        masks = mask_arms(template, cfg, arms)
        mask_of_chip[chip["chip_id"]] = masks[arms[0]]

        def job(entry, template=template, masks=masks):
            clip = load_clip(os.path.join(dataset_dir, entry["dir"]))
            sets, alignment = featurize_frames(clip, template, masks, cfg, n_points)
            return FeatureClip(clip.chip_id, clip.clip_id, sets, alignment)

        entries = chip["clips"]
        if threads > 1 and len(entries) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                clips.extend(pool.map(job, entries))
        else:
            clips.extend(map(job, entries))
    return clips, mask_of_chip, dims


def _make_benchmark(dataset_dir, manifest, cfg, clips, mask_of_chip, dims, arm="both") -> Benchmark:
    clip_dirs = {
        (chip["chip_id"], entry["clip_id"]): entry["dir"]
        for chip in manifest["chips"]
        for entry in chip["clips"]
    }
    normmap_paths = {
        (chip["chip_id"], entry["clip_id"]): entry.get("normmap")
        for chip in manifest["chips"]
        for entry in chip["clips"]
    }

    @lru_cache(maxsize=2)
    def clip_loader(chip_id, clip_id):
        return load_clip(os.path.join(dataset_dir, clip_dirs[(chip_id, clip_id)]))

    @lru_cache(maxsize=8)
    def normmap_loader(chip_id, clip_id):
        path = normmap_paths.get((chip_id, clip_id))
        if path is None:
            raise FormatError(
                f"clip {chip_id}/{clip_id} has no scanner norm map; "
                "re-simulate with render.scans enabled to evaluate the diffuse statistic"
            )
        return read_normmap(os.path.join(dataset_dir, path))

    return Benchmark(
        clips,
        dims=dims,
        sample_count=cfg.specular.sample_count,
        tau=cfg.specular.tau,
        arm=arm,
        clip_loader=clip_loader,
        normmap_loader=normmap_loader,
        mask_of_chip=mask_of_chip,
    )


def _eer_of(dataset, stat, cfg, base_seed) -> tuple[float, float, int]:
    samples = bootstrap_scores(dataset, stat, repeats=cfg.specular.repeats, base_seed=base_seed)
    eer, threshold = eer_empirical(samples)
    return eer, threshold, len(samples)


def _write_sweep_csv(path, header, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def cmd_evaluate(args) -> int:
    cfg = resolve_config(args)
    threads = thread_count()
    out_dir = cfg.paths.out_dir
    stat = args.stat
    manifest = _load_manifest(args.dataset)
    base_seed = cfg.evaluation.base_seed

    arms = MASK_ARMS if args.sweep == "masking" else ("both",)
    clips, mask_of_chip, dims = _featurize_dataset(args.dataset, manifest, cfg, arms, threads=threads)
    bench = _make_benchmark(args.dataset, manifest, cfg, clips, mask_of_chip, dims)

    os.makedirs(out_dir, exist_ok=True)
    samples = bootstrap_scores(bench, stat, repeats=cfg.specular.repeats, base_seed=base_seed)
    report = build_report(samples, statistic_kind=stat, config=config_snapshot(cfg))
    report_path = os.path.join(out_dir, f"report_{stat}.json")
    write_report(report_path, report)
    write_density_csv(os.path.join(out_dir, f"density_{stat}.csv"), report)
    print(
        f"{stat}: empirical EER {report.eer_empirical:.4f} at threshold "
        f"{report.threshold_at_eer:.4f} ({len(samples)} scores)"
    )

    if args.sweep == "frames":
        rows = []
        max_count = min(c.n_frames() for c in bench.clips)
        for count in FRAME_SWEEP_COUNTS:
            if count > max_count:
                print(f"  sample_count {count:3d}: skipped, clips hold only {max_count} frames", file=sys.stderr)
                continue
            eer, threshold, n = _eer_of(CountView(bench, count), stat, cfg, base_seed)
            rows.append((count, f"{eer:.6f}", f"{threshold:.6f}", n))
            print(f"  sample_count {count:3d}: EER {eer:.4f}")
        _write_sweep_csv(os.path.join(out_dir, f"sweep_frames_{stat}.csv"), ("sample_count", "eer", "threshold", "n_scores"), rows)
    elif args.sweep == "points":
        rows = []
        for budget in POINT_SWEEP_BUDGETS:
            sub_clips, sub_masks, sub_dims = _featurize_dataset(
                args.dataset, manifest, cfg, ("both",), n_points=budget, threads=threads
            )
            sub_bench = _make_benchmark(args.dataset, manifest, cfg, sub_clips, sub_masks, sub_dims)
            eer, threshold, n = _eer_of(sub_bench, stat, cfg, base_seed)
            rows.append((budget, f"{eer:.6f}", f"{threshold:.6f}", n))
            print(f"  n_points {budget:3d}: EER {eer:.4f}")
        _write_sweep_csv(os.path.join(out_dir, f"sweep_points_{stat}.csv"), ("n_points", "eer", "threshold", "n_scores"), rows)
    elif args.sweep == "masking":
        rows = []
        for arm in MASK_ARMS:
            arm_bench = _make_benchmark(args.dataset, manifest, cfg, clips, mask_of_chip, dims, arm=arm)
            eer, threshold, n = _eer_of(arm_bench, stat, cfg, base_seed)
            rows.append((arm, f"{eer:.6f}", f"{threshold:.6f}", n))
            print(f"  masking {arm:9s}: EER {eer:.4f}")
        _write_sweep_csv(os.path.join(out_dir, f"sweep_masking_{stat}.csv"), ("arm", "eer", "threshold", "n_scores"), rows)
    elif args.sweep == "seeds":
        rows = []
        for i in range(cfg.evaluation.seed_count):
            eer, threshold, n = _eer_of(bench, stat, cfg, base_seed + i)
            rows.append((base_seed + i, f"{eer:.6f}", f"{threshold:.6f}", n))
            print(f"  base_seed {base_seed + i}: EER {eer:.4f}")
        _write_sweep_csv(os.path.join(out_dir, f"sweep_seeds_{stat}.csv"), ("base_seed", "eer", "threshold", "n_scores"), rows)
    return EXIT_OK


# ------------------------------------------------------------------ main


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except AlignmentFailedError as e:
        print(f"chipprint: alignment failed: {e}", file=sys.stderr)
        return EXIT_ALIGNMENT
    except MaskError as e:
        print(f"chipprint: mask error: {e}", file=sys.stderr)
        return EXIT_MASK
    except IncompatibleFingerprintsError as e:
        print(f"chipprint: incompatible fingerprints: {e}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except (ChipprintError, OSError) as e:
        print(f"chipprint: {e}", file=sys.stderr)
        return EXIT_DATA
    except KeyboardInterrupt:
        return 130
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
