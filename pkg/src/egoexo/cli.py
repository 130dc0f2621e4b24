"""Command-line entry point.

Subcommands: ``toygen``, ``flow compute``, ``synth train|generate``,
``retr train|gallery|query``, ``eval synth|retr``,
``probe invariance|synth-retrieval``, ``plot``.

Exit codes: 0 success, 1 domain error (the error class name is printed),
2 usage error. Every run with an output directory writes a config echo
(config_echo.json) and a JSON-lines event log (run.jsonl) there.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import data, flow, probes, report, retrieval, synthesis, toygen
from .errors import EgoExoError, SchemaError
from .metrics import (
    MetricConfig,
    ToyColorClassifier,
    inception_score,
    psnr,
    sharpness_difference,
    ssim,
)

log = logging.getLogger("egoexo")


def _load_config_file(path: Optional[str]) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise SchemaError(f"config file {p} does not exist")
    try:
        return tomllib.loads(p.read_text("utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise SchemaError(f"config file {p}: {exc}") from exc


def _build_config(cls, section: dict, overrides: dict):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise SchemaError(f"unknown config keys for {cls.__name__}: {sorted(unknown)}")
    values = dict(section)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return cls(**values)


def _prepare_out(args, extra: Optional[dict] = None) -> tuple[Optional[Path], report.JsonlLogger]:
    out = Path(args.out) if getattr(args, "out", None) else None
    logger = report.JsonlLogger(out / "run.jsonl" if out else None)
    if out is not None:
        echo = {k: str(v) if isinstance(v, Path) else v for k, v in vars(args).items() if k != "func"}
        if extra:
            echo.update(extra)
        report.write_json(echo, out / "config_echo.json")
    return out, logger


# ---------------------------------------------------------------------------
# subcommand handlers

def cmd_toygen(args) -> int:
    out, logger = _prepare_out(args)
    if out is None:
        raise SchemaError("toygen requires --out")
    manifest = toygen.generate_dataset(
        out,
        scenes=args.scenes,
        seqs_per_scene=args.seqs,
        length=args.len,
        seed=args.seed,
        exo_kind=args.exo_kind,
        style=args.style,
        image_size=args.image_size,
        jitter_max_deg=args.jitter_max,
        workers=args.workers,
    )
    counts = manifest.counts()
    logger({"event": "toygen_done", "sequences": len(manifest.sequences), "counts": counts})
    log.info("wrote %d sequences to %s", len(manifest.sequences), out)
    print(json.dumps({"manifest": str(out / "manifest.json"), "counts": counts}))
    logger.close()
    return 0


def cmd_flow_compute(args) -> int:
    _, logger = _prepare_out(args)
    manifest = data.load_manifest(args.manifest)
    n = flow.compute_manifest_flows(
        manifest, split=args.split, sigma=args.sigma, workers=args.workers
    )
    logger({"event": "flow_done", "fields_written": n, "sigma": args.sigma})
    print(json.dumps({"fields_written": n}))
    logger.close()
    return 0


def cmd_synth_train(args) -> int:
    out, logger = _prepare_out(args)
    if out is None:
        raise SchemaError("synth train requires --out")
    section = _load_config_file(args.config).get("synthesis", {})
    cfg = _build_config(
        synthesis.SynthesisConfig,
        section,
        {
            "epochs": args.epochs,
            "batch_size": args.batch_size,
            "lr": args.lr,
            "lambda_l1": args.lambda_l1,
            "base_channels": args.base_channels,
            "gen_depth": args.gen_depth,
            "seed": args.seed,
        },
    )
    report.write_json(dataclasses.asdict(cfg), out / "synthesis_config.json")
    manifest = data.load_manifest(args.manifest)
    ckpts, history = synthesis.train(
        manifest, cfg, init=args.init, out_dir=out, log_cb=logger
    )
    report.plot_loss_history(
        [h.as_dict() for h in history], ["loss_d", "loss_g_adv", "loss_l1"],
        out / "losses.png", title="cGAN training",
    )
    report.write_csv(
        out / "losses.csv",
        ["epoch", "d_steps", "g_steps", "loss_d", "loss_g_adv", "loss_l1"],
        [[h.epoch, h.d_steps, h.g_steps, h.loss_d, h.loss_g_adv, h.loss_l1] for h in history],
    )
    print(json.dumps({"checkpoints": [str(p) for p in ckpts], "final_l1": history[-1].loss_l1}))
    logger.close()
    return 0


def cmd_synth_generate(args) -> int:
    out, logger = _prepare_out(args)
    if out is None:
        raise SchemaError("synth generate requires --out")
    manifest = data.load_manifest(args.manifest)
    n = synthesis.generate_split(args.ckpt, manifest, args.split, out)
    logger({"event": "generate_done", "frames": n})
    print(json.dumps({"frames_written": n, "out": str(out)}))
    logger.close()
    return 0


def _retrieval_overrides(args) -> dict:
    return {
        "variant": getattr(args, "variant", None),
        "epochs": getattr(args, "epochs", None),
        "batch_size": getattr(args, "batch_size", None),
        "lr": getattr(args, "lr", None),
        "margin": getattr(args, "margin", None),
        "neg_ratio": getattr(args, "neg_ratio", None),
        "width_base": getattr(args, "width_base", None),
        "input_size": getattr(args, "input_size", None),
        "seed": getattr(args, "seed", None),
    }


def cmd_retr_train(args) -> int:
    out, logger = _prepare_out(args)
    if out is None:
        raise SchemaError("retr train requires --out")
    section = _load_config_file(args.config).get("retrieval", {})
    cfg = _build_config(retrieval.RetrievalConfig, section, _retrieval_overrides(args))
    report.write_json(dataclasses.asdict(cfg), out / "retrieval_config.json")
    manifest = data.load_manifest(args.manifest)
    ckpts, history, _ = retrieval.train(
        manifest, cfg, init=args.init, adapt=args.adapt, out_dir=out, log_cb=logger
    )
    report.write_csv(
        out / "losses.csv",
        ["epoch", "steps", "loss", "val_auc"],
        [[h.epoch, h.steps, h.loss, h.val_auc] for h in history],
    )
    report.plot_loss_history(
        [h.as_dict() for h in history], ["loss", "val_auc"],
        out / "losses.png", title=f"Retrieval training ({cfg.variant})",
    )
    print(json.dumps({"checkpoints": [str(p) for p in ckpts], "final_loss": history[-1].loss}))
    logger.close()
    return 0


def cmd_retr_gallery(args) -> int:
    _, logger = _prepare_out(args)
    model = retrieval.load_model(args.ckpt)
    manifest = data.load_manifest(args.manifest)
    gallery = retrieval.build_gallery(
        model,
        manifest,
        args.split,
        args.view,
        variant=args.variant or model.cfg.variant,
        source=args.source,
        synthesized_dir=args.synth_dir,
    )
    path = retrieval.save_gallery(gallery, args.gallery_out)
    logger({"event": "gallery_done", "entries": len(gallery), "kind": gallery.kind})
    print(json.dumps({"gallery": str(path), "entries": len(gallery), "kind": gallery.kind}))
    logger.close()
    return 0


def cmd_retr_query(args) -> int:
    _, logger = _prepare_out(args)
    model = retrieval.load_model(args.ckpt)
    gallery = retrieval.load_gallery(args.gallery)
    size = model.cfg.input_size

    if args.image is not None:
        frame = data.resize_frame(data.load_frame(args.image), (size, size))
        emb = retrieval.encode(model, args.view, frame)
        dists = np.linalg.norm(gallery.embeddings.astype(np.float64) - emb, axis=1)
        order = np.argsort(dists, kind="stable")[: args.topk]
        matches = [{"id": gallery.ids[i], "distance": float(dists[i])} for i in order]
        print(json.dumps({"matches": matches}))
        logger.close()
        return 0

    if args.manifest is None:
        raise SchemaError("retr query needs --image or --manifest")
    manifest = data.load_manifest(args.manifest)
    variant = model.cfg.variant
    results = []
    for seq in manifest.split_sequences(args.split):
        n_t = seq.length if variant == "rgb" else seq.length - 1
        for t in range(n_t):
            ref = retrieval.SampleRef(
                seq.id, args.view, t, retrieval._input_path(seq, args.view, t, variant)
            )
            emb = retrieval.encode(model, args.view, retrieval.load_input(ref, variant, size))
            truth = retrieval.entry_id(seq.id, "exo" if args.view == "ego" else "ego", t)
            res = retrieval.retrieve(emb, truth, gallery)
            results.append(res)
    ranks = [r.rank_of_truth for r in results]
    summary = {
        "queries": len(results),
        "gallery_size": gallery.embeddings.shape[0],
        "mean_rank": float(np.mean(ranks)),
        "rank1_rate": float(np.mean([r == 1 for r in ranks])),
    }
    logger({"event": "query_done", **summary})
    print(json.dumps(summary))
    logger.close()
    return 0


def _make_classifier(name: str):
    if name == "toy":
        return ToyColorClassifier()
    raise SchemaError(
        f"unknown classifier {name!r}; 'toy' is built in, pretrained scene "
        "classifiers plug in through the Python API"
    )


def cmd_eval_synth(args) -> int:
    out, logger = _prepare_out(args)
    if out is None:
        raise SchemaError("eval synth requires --out")
    manifest = data.load_manifest(args.manifest)
    gen, _, _ = synthesis.load_generator(args.ckpt)
    clf = _make_classifier(args.classifier)
    mcfg = MetricConfig()

    synthesized, truths, rows = [], [], []
    triplets = []
    for seq in manifest.split_sequences(args.split):
        for t in range(seq.length):
            exo = data.resize_for_synthesis(data.load_frame(seq.frame_path("exo", t)))
            ego = data.resize_for_synthesis(data.load_frame(seq.frame_path("ego", t)))
            fake = synthesis.generate(gen, exo)
            synthesized.append(fake)
            truths.append(ego)
            rows.append(
                [seq.id, t, ssim(ego, fake, mcfg), psnr(ego, fake, mcfg),
                 sharpness_difference(ego, fake, mcfg)]
            )
            if len(triplets) < 6 and t == 0:
                triplets.append((exo, ego, fake))
    if not rows:
        raise EgoExoError(f"split {args.split!r} is empty")

    is_table = []
    for name, frames in (("synthesized", synthesized), ("ground_truth", truths)):
        is_table.append(
            [name,
             inception_score(frames, clf),
             inception_score(frames, clf, topk=1),
             inception_score(frames, clf, topk=min(5, clf.n_classes - 1))]
        )
    arr = np.asarray([r[2:] for r in rows], dtype=np.float64)
    summary = {
        "split": args.split,
        "n_pairs": len(rows),
        "classifier": args.classifier,
        "inception_score": {
            row[0]: {"all": row[1], "top1": row[2], "top5": row[3]} for row in is_table
        },
        "ssim": float(arr[:, 0].mean()),
        "psnr": float(arr[:, 1].mean()),
        "sharp_diff": float(arr[:, 2].mean()),
    }
    report.write_json(summary, out / "report.json")
    report.write_csv(out / "inception_scores.csv",
                     ["images", "all_classes", "top1", "top5"], is_table)
    report.write_csv(out / "quality.csv", ["ssim", "psnr", "sharp_diff"],
                     [[summary["ssim"], summary["psnr"], summary["sharp_diff"]]])
    report.write_csv(out / "per_pair.csv",
                     ["sequence", "t", "ssim", "psnr", "sharp_diff"], rows)
    report.plot_synthesis_samples(triplets, out / "samples.png")
    logger({"event": "eval_synth_done", **{k: v for k, v in summary.items() if k != "inception_score"}})
    print(json.dumps(summary))
    logger.close()
    return 0


def cmd_eval_retr(args) -> int:
    out, logger = _prepare_out(args)
    if out is None:
        raise SchemaError("eval retr requires --out")
    model = retrieval.load_model(args.ckpt)
    manifest = data.load_manifest(args.manifest)
    variant = args.variant or model.cfg.variant

    if args.gallery is not None:
        gallery = retrieval.load_gallery(args.gallery)
        query_view = "ego" if args.direction == "ego2exo" else "exo"
        results = []
        for seq in manifest.split_sequences(args.split):
            n_t = seq.length if variant == "rgb" else seq.length - 1
            inputs = [
                retrieval.load_input(
                    retrieval.SampleRef(seq.id, query_view, t,
                                        retrieval._input_path(seq, query_view, t, variant)),
                    variant, model.cfg.input_size)
                for t in range(n_t)
            ]
            embs = retrieval.encode_batch(model, query_view, inputs)
            gal_view = "exo" if query_view == "ego" else "ego"
            for t in range(n_t):
                truth = retrieval.entry_id(seq.id, gal_view, t)
                results.append(retrieval.retrieve(embs[t], truth, gallery))
        from .metrics import cmc as cmc_fn

        curve = cmc_fn(results)
        per_seq = {}
    else:
        ev = retrieval.evaluate(model, manifest, args.split, variant, args.direction)
        curve = ev.curve
        per_seq = ev.per_sequence_auc

    summary = {
        "variant": variant,
        "direction": args.direction,
        "split": args.split,
        "auc": curve.auc,
        "gallery_size": curve.gallery_size,
        "per_sequence_auc": per_seq,
    }
    report.write_json(summary, out / "summary.json")
    report.write_cmc_csv(curve, out / "cmc.csv")
    report.plot_cmc([(f"{variant} {args.direction}", curve)], out / "cmc.png")
    if per_seq:
        report.write_csv(out / "per_sequence.csv", ["sequence", "auc"],
                         sorted(per_seq.items()))
    logger({"event": "eval_retr_done", "auc": curve.auc})
    print(json.dumps({k: v for k, v in summary.items() if k != "per_sequence_auc"}))
    logger.close()
    return 0


def cmd_probe_invariance(args) -> int:
    out, logger = _prepare_out(args)
    if out is None:
        raise SchemaError("probe invariance requires --out")
    model = retrieval.load_model(args.ckpt)
    manifest = data.load_manifest(args.manifest)
    rep = probes.view_invariance_test(
        model, manifest,
        variant=args.variant or model.cfg.variant,
        standardize=args.standardize,
        permute_labels=args.permute_labels,
        seed=args.seed,
    )
    report.write_json(rep.as_dict(), out / "report.json")
    rows = [[name] + [rep.accuracies[name][v] for v in probes.EVAL_VIEWS]
            for name in probes.CLASSIFIER_NAMES]
    report.write_csv(out / "grid.csv", ["classifier", "eval_ego", "eval_exo", "eval_both"], rows)
    report.plot_probe_grid(rep.accuracies, rep.chance, out / "grid.png")
    logger({"event": "probe_invariance_done", "chance": rep.chance})
    print(json.dumps(rep.as_dict()))
    logger.close()
    return 0


def cmd_probe_synth_retrieval(args) -> int:
    out, logger = _prepare_out(args)
    if out is None:
        raise SchemaError("probe synth-retrieval requires --out")
    manifest = data.load_manifest(args.manifest)
    model = retrieval.load_model(args.retr_ckpt)
    curve_exo, curve_ego = probes.synthesized_retrieval_test(
        args.synth_ckpt, model, manifest, split=args.split,
        synthesized_dir=args.synth_dir,
    )
    report.write_cmc_csv(curve_exo, out / "cmc_vs_exo.csv")
    report.write_cmc_csv(curve_ego, out / "cmc_vs_ego.csv")
    report.plot_cmc(
        [("synthesized vs F_exo", curve_exo), ("synthesized vs F_ego", curve_ego)],
        out / "cmc.png", title="Retrieving ground truth from synthesized images",
    )
    summary = {"auc_vs_exo": curve_exo.auc, "auc_vs_ego": curve_ego.auc,
               "gallery_size": curve_exo.gallery_size}
    report.write_json(summary, out / "summary.json")
    logger({"event": "probe_synth_retrieval_done", **summary})
    print(json.dumps(summary))
    logger.close()
    return 0


def cmd_plot(args) -> int:
    if len(args.labels) not in (0, len(args.csv)):
        raise SchemaError("--labels must match --csv in count")
    curves = []
    for i, path in enumerate(args.csv):
        label = args.labels[i] if args.labels else Path(path).stem
        curves.append((label, report.read_cmc_csv(path)))
    out_path = Path(args.plot_out)
    report.plot_cmc(curves, out_path, title=args.title)
    print(json.dumps({"plot": str(out_path)}))
    return 0


# ---------------------------------------------------------------------------
# parser

def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="TOML config file")
    parser.add_argument("--seed", type=int, default=None, help="random seed")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--workers", type=int, default=1, help="worker pool size")
    parser.add_argument("--log-level", default="warning",
                        choices=["debug", "info", "warning", "error"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="egoexo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("toygen", help="generate a procedural paired dataset")
    _common(p)
    p.add_argument("--scenes", type=int, default=4)
    p.add_argument("--seqs", type=int, default=5)
    p.add_argument("--len", type=int, default=100)
    p.add_argument("--exo-kind", default="side", choices=["side", "top"])
    p.add_argument("--style", default="a", choices=["a", "b"])
    p.add_argument("--image-size", type=int, default=toygen.DEFAULT_IMAGE_SIZE)
    p.add_argument("--jitter-max", type=float, default=toygen.DEFAULT_JITTER_DEG)
    p.set_defaults(func=cmd_toygen)

    p_flow = sub.add_parser("flow", help="optical flow utilities")
    flow_sub = p_flow.add_subparsers(dest="flow_command", required=True)
    p = flow_sub.add_parser("compute", help="compute smoothed flows for a split")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="all", choices=["train", "val", "test", "all"])
    p.add_argument("--sigma", type=float, default=1.5)
    p.set_defaults(func=cmd_flow_compute)

    p_synth = sub.add_parser("synth", help="exo-to-ego synthesis")
    synth_sub = p_synth.add_subparsers(dest="synth_command", required=True)
    p = synth_sub.add_parser("train")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--init", help="checkpoint to resume / fine-tune from")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lambda-l1", type=float, dest="lambda_l1")
    p.add_argument("--base-channels", type=int)
    p.add_argument("--gen-depth", type=int)
    p.set_defaults(func=cmd_synth_train)
    p = synth_sub.add_parser("generate")
    _common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.set_defaults(func=cmd_synth_generate)

    p_retr = sub.add_parser("retr", help="cross-view retrieval")
    retr_sub = p_retr.add_subparsers(dest="retr_command", required=True)
    p = retr_sub.add_parser("train")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--variant", choices=["rgb", "flow"])
    p.add_argument("--init", help="pretrained checkpoint")
    p.add_argument("--adapt", action="store_true",
                   help="freeze the embedding heads, tune conv stages only")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--margin", type=float)
    p.add_argument("--neg-ratio", type=int)
    p.add_argument("--width-base", type=int)
    p.add_argument("--input-size", type=int)
    p.set_defaults(func=cmd_retr_train)
    p = retr_sub.add_parser("gallery")
    _common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--view", default="exo", choices=["ego", "exo"])
    p.add_argument("--variant", choices=["rgb", "flow"])
    p.add_argument("--source", default="ground_truth", choices=["ground_truth", "synthesized"])
    p.add_argument("--synth-dir", help="directory of synthesized images")
    p.add_argument("--gallery-out", required=True, help="output gallery file")
    p.set_defaults(func=cmd_retr_gallery)
    p = retr_sub.add_parser("query")
    _common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--gallery", required=True)
    p.add_argument("--image", help="query a single image")
    p.add_argument("--manifest", help="query every frame of a split")
    p.add_argument("--split", default="test")
    p.add_argument("--view", default="ego", choices=["ego", "exo"])
    p.add_argument("--topk", type=int, default=5)
    p.set_defaults(func=cmd_retr_query)

    p_eval = sub.add_parser("eval", help="evaluation reports")
    eval_sub = p_eval.add_subparsers(dest="eval_command", required=True)
    p = eval_sub.add_parser("synth")
    _common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--classifier", default="toy")
    p.set_defaults(func=cmd_eval_synth)
    p = eval_sub.add_parser("retr")
    _common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--variant", choices=["rgb", "flow"])
    p.add_argument("--direction", default="ego2exo", choices=["ego2exo", "exo2ego"])
    p.add_argument("--gallery", help="rank against a stored gallery file instead")
    p.set_defaults(func=cmd_eval_retr)

    p_probe = sub.add_parser("probe", help="analysis probes")
    probe_sub = p_probe.add_subparsers(dest="probe_command", required=True)
    p = probe_sub.add_parser("invariance")
    _common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--variant", choices=["rgb", "flow"])
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--permute-labels", action="store_true",
                   help="chance-level null: shuffle training labels")
    p.set_defaults(func=cmd_probe_invariance)
    p = probe_sub.add_parser("synth-retrieval")
    _common(p)
    p.add_argument("--synth-ckpt", required=True)
    p.add_argument("--retr-ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--synth-dir", help="reuse pre-generated images")
    p.set_defaults(func=cmd_probe_synth_retrieval)

    p = sub.add_parser("plot", help="re-render figures from CSV data")
    _common(p)
    p.add_argument("--kind", default="cmc", choices=["cmc"])
    p.add_argument("--csv", nargs="+", required=True)
    p.add_argument("--labels", nargs="*", default=[])
    p.add_argument("--title", default="Cumulative matching curve")
    p.add_argument("--plot-out", required=True)
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper()))
    if args.seed is None:
        args.seed = 0
    try:
        return args.func(args)
    except EgoExoError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
