"""Command-line orchestration.

Subcommands: gendata, train, generate, transfer, eval, sweep-strength.
Configuration precedence is defaults < --config JSON file < explicit flags.
The artifact root defaults to ``$SADM_HOME`` (or ./sadm_home) and holds the
dataset, checkpoints, logs, and outputs. Exit codes are stable per error
class: 0 success, 2 validation/parameter, 3 missing files or I/O, 4 training
divergence, 5 malformed checkpoint.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import bench, reporting
from .canvas import load_image_png, load_mask_png
from .errors import (
    CheckpointFormatError,
    DivergenceError,
    SadmError,
)
from .metrics import HISTOGRAD, alpha_mask_iou, build_prototypes, self_retrieval_rate
from .pipeline import (
    EffectResult,
    TransferContext,
    font_effect_generate,
    saet_refine,
    saet_sample,
    save_effect_result,
    select_reference,
    sgm_sample,
    srm_refine,
)
from .rng import derive_seed
from .synthdata import make_triplet, read_dataset, write_dataset
from .training import (
    evaluate_autoencoder,
    resume_autoencoder,
    resume_denoiser,
    train_autoencoder,
    train_denoiser,
)

SWEEP_STRENGTHS = (0.0, 0.4, 0.6, 0.8, 0.85, 0.9)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_DIVERGENCE = 4
EXIT_CHECKPOINT = 5


@dataclass
class RunConfig:
    resolution: int = 64
    latent_size: int = 16
    steps: int = 50
    cfg_scale: float = 6.0
    strength_srm: float = 0.8
    strength_saet_sgm: float = 0.9
    strength_saet_srm: float = 0.8
    seed: int = 0
    jobs: int = 1
    dataset_size: int = 8192
    ae_steps: int = 4000
    ae_batch: int = 32
    ae_lr: float = 1e-3
    denoiser_steps: int = 10000
    denoiser_batch: int = 16
    denoiser_lr: float = 2e-4
    prototype_size: int = 512
    home: str = ""

    def __post_init__(self):
        for s in (self.strength_srm, self.strength_saet_sgm, self.strength_saet_srm):
            if not (0.0 <= s <= 1.0):
                raise SadmError(f"strength {s} outside [0, 1]")
        if self.steps < 1:
            raise SadmError("steps must be >= 1")
        if not self.home:
            self.home = os.environ.get("SADM_HOME", "sadm_home")

    @property
    def home_path(self) -> Path:
        return Path(self.home)

    @property
    def dataset_dir(self) -> Path:
        return self.home_path / "dataset"

    @property
    def ae_checkpoint(self) -> Path:
        return self.home_path / "checkpoints" / "ae.sadm"

    @property
    def denoiser_checkpoint(self) -> Path:
        return self.home_path / "checkpoints" / "denoiser.sadm"

    def log_path(self, target: str) -> Path:
        return self.home_path / "logs" / f"{target}_loss.csv"


def load_config(args) -> RunConfig:
    values: dict = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        file_values = json.loads(path.read_text(encoding="utf-8"))
        known = {f.name for f in dataclasses.fields(RunConfig)}
        unknown = set(file_values) - known
        if unknown:
            raise SadmError(f"unknown config fields in {path}: {sorted(unknown)}")
        values.update(file_values)
    for field in dataclasses.fields(RunConfig):
        flag = getattr(args, field.name, None)
        if flag is not None:
            values[field.name] = flag
    return RunConfig(**values)


def _load_models(cfg: RunConfig):
    for p in (cfg.ae_checkpoint, cfg.denoiser_checkpoint):
        if not p.exists():
            raise FileNotFoundError(f"missing checkpoint {p} (run `sadm train` first)")
    ae, _ = resume_autoencoder(cfg.ae_checkpoint)
    den, _ = resume_denoiser(cfg.denoiser_checkpoint)
    ae.eval()
    den.eval()
    return den, ae


def _prototypes(cfg: RunConfig):
    rng_seed = derive_seed(cfg.seed, "prototypes")
    triplets = [make_triplet(derive_seed(rng_seed, i)) for i in range(cfg.prototype_size)]
    protos = build_prototypes(HISTOGRAD, triplets)
    held = [make_triplet(derive_seed(rng_seed, "held", i)) for i in range(256)]
    rate = self_retrieval_rate(HISTOGRAD, protos, held)
    return protos, rate


def _parallel_map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# --- subcommands ----------------------------------------------------------------

def cmd_gendata(args) -> int:
    cfg = load_config(args)
    manifest = write_dataset(cfg.dataset_dir, cfg.dataset_size, cfg.seed)
    print(f"wrote {cfg.dataset_size} triplets under {cfg.dataset_dir} ({manifest})")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args)
    if not (cfg.dataset_dir / "manifest.jsonl").exists():
        raise FileNotFoundError(f"dataset not found at {cfg.dataset_dir}; run gendata")
    triplets = read_dataset(cfg.dataset_dir)
    cfg.log_path("x").parent.mkdir(parents=True, exist_ok=True)

    if args.target == "ae":
        model = opt = None
        start = 0
        if args.resume and cfg.ae_checkpoint.exists():
            model, opt = resume_autoencoder(cfg.ae_checkpoint)
            start = opt.step
            print(f"resuming autoencoder from step {start}")
        train_autoencoder(triplets, cfg.ae_steps, cfg.seed, batch_size=cfg.ae_batch,
                          lr=cfg.ae_lr, model=model, opt=opt, start_step=start,
                          checkpoint_path=cfg.ae_checkpoint,
                          log_path=cfg.log_path("ae"))
        held = [make_triplet(derive_seed(cfg.seed, "heldout", i)) for i in range(64)]
        model, _ = resume_autoencoder(cfg.ae_checkpoint)
        stats = evaluate_autoencoder(model, held)
        print(f"autoencoder checkpoint: {cfg.ae_checkpoint} "
              f"(held-out psnr {stats['psnr']:.2f} dB, alpha IoU {stats['iou']:.3f})")
    else:
        if not cfg.ae_checkpoint.exists():
            raise FileNotFoundError(f"denoiser training needs {cfg.ae_checkpoint}")
        ae, _ = resume_autoencoder(cfg.ae_checkpoint)
        from .synthdata import encode_dataset
        encoded = encode_dataset(triplets, ae)
        model = opt = None
        start = 0
        if args.resume and cfg.denoiser_checkpoint.exists():
            model, opt = resume_denoiser(cfg.denoiser_checkpoint)
            start = opt.step
            print(f"resuming denoiser from step {start}")
        train_denoiser(encoded, cfg.denoiser_steps, cfg.seed,
                       batch_size=cfg.denoiser_batch, lr=cfg.denoiser_lr,
                       model=model, opt=opt, start_step=start,
                       checkpoint_path=cfg.denoiser_checkpoint,
                       log_path=cfg.log_path("denoiser"))
        print(f"denoiser checkpoint: {cfg.denoiser_checkpoint}")
    return EXIT_OK


def _write_results(results: list[EffectResult], out_dir: Path, cfg: RunConfig,
                   ref_index: int, grid: bool) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    sidecar = {
        "strength_srm": cfg.strength_srm,
        "strength_saet_sgm": cfg.strength_saet_sgm,
        "strength_saet_srm": cfg.strength_saet_srm,
        "cfg_scale": cfg.cfg_scale,
        "steps": cfg.steps,
        "reference_index": ref_index,
    }
    for i, res in enumerate(results):
        save_effect_result(res, out_dir / f"letter_{i:02d}.png", sidecar)
    if grid:
        labels = [f"{i}{' (ref)' if i == ref_index else ''}" for i in range(len(results))]
        reporting.render_contact_sheet([r.image for r in results],
                                       out_dir / "grid.png", labels=labels)


def cmd_generate(args) -> int:
    cfg = load_config(args)
    if args.noise_strength is not None:
        cfg.strength_srm = float(args.noise_strength)
    den, ae = _load_models(cfg)
    masks = [load_mask_png(p).require_condition() for p in args.masks]
    results = font_effect_generate(
        den, ae, masks, args.class_id, cfg.seed, cfg.cfg_scale, cfg.steps,
        cfg.strength_srm, cfg.strength_saet_sgm, cfg.strength_saet_srm,
        use_saet=not args.no_saet, use_saa=not args.ablate_saa)
    out_dir = Path(args.out) if args.out else cfg.home_path / "outputs" / "generate"
    _write_results(results, out_dir, cfg, select_reference(masks), args.grid)
    print(f"wrote {len(results)} letters to {out_dir}")
    return EXIT_OK


def cmd_transfer(args) -> int:
    cfg = load_config(args)
    den, ae = _load_models(cfg)
    ref_mask = load_mask_png(args.ref_mask).require_condition()
    ref_image = load_image_png(args.ref_image)
    ref_coarse = load_image_png(args.ref_coarse) if args.ref_coarse else ref_image
    out_dir = Path(args.out) if args.out else cfg.home_path / "outputs" / "transfer"
    out_dir.mkdir(parents=True, exist_ok=True)
    results = []
    for i, mask_path in enumerate(args.masks):
        tgt_mask = load_mask_png(mask_path).require_condition()
        tgt_seed = derive_seed(cfg.seed, "target", i)
        coarse = saet_sample(
            den, ae, TransferContext(ref_mask, ref_coarse, cfg.strength_saet_sgm,
                                     cfg.strength_saet_srm),
            tgt_mask, args.class_id, tgt_seed, cfg.cfg_scale, cfg.steps,
            use_saa=not args.ablate_saa)
        res = saet_refine(
            den, ae, TransferContext(ref_mask, ref_image, cfg.strength_saet_sgm,
                                     cfg.strength_saet_srm),
            coarse, tgt_mask, args.class_id, tgt_seed, cfg.cfg_scale, cfg.steps,
            use_saa=not args.ablate_saa)
        save_effect_result(res, out_dir / f"transfer_{i:02d}.png",
                           {"reference_mask": str(args.ref_mask)})
        results.append(res)
    if args.grid:
        reporting.render_contact_sheet([r.image for r in results], out_dir / "grid.png")
    print(f"wrote {len(results)} transfers to {out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args)
    den, ae = _load_models(cfg)
    suite = bench.load_suite(args.suite) if args.suite else bench.shipped_suite()
    protos, rate = _prototypes(cfg)
    if rate < 0.9:
        print(f"warning: embedder self-retrieval {rate:.3f} below the 0.90 sanity gate",
              file=sys.stderr)

    runnable = [(i, c) for i, c in enumerate(suite.cases) if c.desk_class is not None]

    def run_case(item):
        index, case = item
        masks = bench.resolve_masks(case, args.mask_dir)
        results = font_effect_generate(
            den, ae, masks, int(case.desk_class), derive_seed(cfg.seed, "case", index),
            cfg.cfg_scale, cfg.steps, cfg.strength_srm, cfg.strength_saet_sgm,
            cfg.strength_saet_srm, use_saet=not args.no_saet,
            use_saa=not args.ablate_saa)
        from .metrics import m_sim_ext, m_sim_int, style_consistency
        return {
            "index": index,
            "characters": case.characters,
            "category": case.category,
            "language": case.language,
            "desk_class": int(case.desk_class),
            "reference": select_reference(masks),
            "m_sim_int": float(np.mean([
                m_sim_int(HISTOGRAD, protos, r.image, r.source_mask, r.prompt)
                for r in results])),
            "m_sim_ext": float(np.mean([
                m_sim_ext(HISTOGRAD, protos, r.image, r.source_mask, r.prompt)
                for r in results])),
            "style_consistency": float(style_consistency(
                HISTOGRAD, [r.image for r in results])),
        }

    case_rows = _parallel_map(run_case, runnable, cfg.jobs)
    skipped = [{"index": i, "characters": c.characters,
                "reason": "no desk_class mapping for prompt"}
               for i, c in enumerate(suite.cases) if c.desk_class is None]
    report = {"seed": cfg.seed, "embedder_self_retrieval": rate,
              "cases": case_rows, "skipped": skipped,
              "aggregates": bench.aggregate_scores(case_rows)}

    out_dir = Path(args.out) if args.out else cfg.home_path / "outputs" / "eval"
    out_dir.mkdir(parents=True, exist_ok=True)
    reporting.write_report_json(report, out_dir / "report.json")
    reporting.write_report_csv(report, out_dir / "report.csv")
    reporting.render_category_figure(report, out_dir / "report_categories.png")
    print(f"scored {len(case_rows)} cases ({len(skipped)} skipped) -> {out_dir}")
    return EXIT_OK


def cmd_sweep_strength(args) -> int:
    cfg = load_config(args)
    den, ae = _load_models(cfg)
    if args.masks:
        masks = [load_mask_png(p).require_condition() for p in args.masks]
    else:
        from .canvas import generate_canvas_mask
        masks = [generate_canvas_mask(derive_seed(cfg.seed, "sweep-mask", i),
                                      cfg.resolution, cfg.resolution, "glyphlike")
                 for i in range(args.cases)]
    strengths = args.strengths or list(SWEEP_STRENGTHS)

    out_dir = Path(args.out) if args.out else cfg.home_path / "outputs" / "sweep"
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    per_strength_images = {s: [] for s in strengths}
    for i, mask in enumerate(masks):
        seed_i = derive_seed(cfg.seed, "sweep", i)
        coarse = sgm_sample(den, ae, mask, args.class_id, seed_i, cfg.cfg_scale, cfg.steps)
        for s in strengths:
            res = srm_refine(den, ae, coarse, mask, args.class_id, s, seed_i,
                             cfg.cfg_scale, cfg.steps)
            flex = float((res.alpha.threshold().data != mask.data).mean())
            rows.append({"case": i, "strength": s, "boundary_flexibility": flex,
                         "alpha_iou": alpha_mask_iou(res.alpha, mask)})
            per_strength_images[s].append(res.image)

    import csv as _csv
    with open(out_dir / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        writer = _csv.DictWriter(fh, fieldnames=["case", "strength",
                                                 "boundary_flexibility", "alpha_iou"])
        writer.writeheader()
        writer.writerows(rows)
    means = [float(np.mean([r["boundary_flexibility"] for r in rows
                            if r["strength"] == s])) for s in strengths]
    reporting.render_strength_sweep_figure(strengths, means, out_dir / "sweep.png")
    if args.grid:
        for s in strengths:
            reporting.render_contact_sheet(per_strength_images[s],
                                           out_dir / f"grid_strength_{s:g}.png")
    print("mean boundary flexibility: "
          + ", ".join(f"{s:g}: {m:.4f}" for s, m in zip(strengths, means)))
    print(f"sweep artifacts -> {out_dir}")
    return EXIT_OK


# --- argument plumbing ------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (flags override its values)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None, help="parallel case workers")
    p.add_argument("--home", default=None, help="artifact root (default $SADM_HOME)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sadm",
        description="Shape-adaptive latent diffusion on irregular canvases.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gendata", help="write the procedural training dataset")
    _add_common(p)
    p.add_argument("--dataset-size", dest="dataset_size", type=int, default=None)
    p.set_defaults(fn=cmd_gendata)

    p = sub.add_parser("train", help="train the autoencoder or the denoiser")
    _add_common(p)
    p.add_argument("target", choices=["ae", "denoiser"])
    p.add_argument("--resume", action="store_true",
                   help="continue from the existing checkpoint")
    p.add_argument("--ae-steps", dest="ae_steps", type=int, default=None)
    p.add_argument("--denoiser-steps", dest="denoiser_steps", type=int, default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("generate", help="render letters for canvas mask files")
    _add_common(p)
    p.add_argument("masks", nargs="+", help="canvas mask PNGs")
    p.add_argument("--class-id", type=int, required=True)
    p.add_argument("--out")
    p.add_argument("--no-saet", action="store_true",
                   help="independent per-letter generation baseline")
    p.add_argument("--ablate-saa", action="store_true",
                   help="plain attention everywhere (ablation)")
    p.add_argument("--noise-strength", type=float, default=None,
                   help="override the refinement strength")
    p.add_argument("--grid", action="store_true", help="also write a contact sheet")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("transfer", help="transfer a reference effect onto new masks")
    _add_common(p)
    p.add_argument("masks", nargs="+", help="target canvas mask PNGs")
    p.add_argument("--ref-image", required=True, help="refined reference image PNG")
    p.add_argument("--ref-mask", required=True, help="reference canvas mask PNG")
    p.add_argument("--ref-coarse", help="coarse reference image (defaults to --ref-image)")
    p.add_argument("--class-id", type=int, required=True)
    p.add_argument("--out")
    p.add_argument("--ablate-saa", action="store_true")
    p.add_argument("--grid", action="store_true")
    p.set_defaults(fn=cmd_transfer)

    p = sub.add_parser("eval", help="run the benchmark and write score reports")
    _add_common(p)
    p.add_argument("--suite", help="suite JSON (default: shipped 145-case suite)")
    p.add_argument("--mask-dir", required=True,
                   help="directory of <font_type>/<codepoint>.png masks")
    p.add_argument("--out")
    p.add_argument("--no-saet", action="store_true")
    p.add_argument("--ablate-saa", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sweep-strength", help="refinement noise-strength sweep")
    _add_common(p)
    p.add_argument("masks", nargs="*", help="canvas mask PNGs (default: generated)")
    p.add_argument("--cases", type=int, default=16)
    p.add_argument("--class-id", type=int, default=0)
    p.add_argument("--strengths", type=float, nargs="+", default=None)
    p.add_argument("--out")
    p.add_argument("--grid", action="store_true")
    p.set_defaults(fn=cmd_sweep_strength)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except CheckpointFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SadmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
