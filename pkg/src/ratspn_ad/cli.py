"""Command-line entry point.

Every subcommand writes into its own run directory together with a
``manifest.json`` holding the resolved configuration, its hash, the seeds
used and SHA-256 digests of all inputs and outputs.  Exit codes: 0 success,
1 usage error, 2 data or validation error, 3 numerical failure (a
``diagnostics.txt`` is written to the run directory).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import traceback
from contextlib import contextmanager, nullcontext
from pathlib import Path

import numpy as np

from . import tensorio
from .autoencoders import AEConfig, AEModel, build_ae, train_ae, write_trace_csv
from .circuit import load_circuit, save_circuit
from .config import OUTPUT_ENV, ConfigError, RunConfig, load_config
from .em import EmConfig, fit_rat_spn, write_ll_trace_csv
from .evaluation import ScoredPixelSet, evaluate, export_score_histograms
from .pipeline.imageio import to_preview, write_pgm
from .pipeline.patches import PatchSet, extract_dataset_patches, split_dataset
from .pipeline.scoring import HeatmapResult, position_labels, score_image, threshold_heatmap, upsample_nearest
from .pipeline.synthetic import make_synthetic_dataset, read_dataset, write_dataset

logger = logging.getLogger("ratspn_ad")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
HEATMAP_MAGIC = b"HEAT"
LOCK_NAME = ".lock"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _digest_inputs(paths) -> dict[str, str]:
    out = {}
    for p in paths:
        p = Path(p)
        files = sorted(q for q in p.rglob("*") if q.is_file()) if p.is_dir() else [p]
        for q in files:
            if q.name in ("manifest.json", LOCK_NAME):
                continue
            out[str(q)] = sha256_file(q)
    return out


@contextmanager
def run_lock(out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise DataError(f"{out_dir} is locked by another run (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def write_manifest(out_dir: Path, command: str, cfg: RunConfig, seed: int, inputs) -> None:
    artifacts = {
        str(q.relative_to(out_dir)): sha256_file(q)
        for q in sorted(out_dir.rglob("*"))
        if q.is_file() and q.name not in ("manifest.json", LOCK_NAME)
    }
    manifest = {
        "command": command,
        "config_sha256": cfg.digest(),
        "config": cfg.to_text(),
        "global_seed": cfg.seeds.seed,
        "stage_seed": seed,
        "inputs": _digest_inputs(inputs),
        "artifacts": artifacts,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _require(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise DataError(f"{what} not found: {p}")
    return p


# --- subcommands ------------------------------------------------------------


def cmd_synth_data(args, cfg: RunConfig, out: Path):
    pl = cfg.pipeline
    seed = cfg.seed_for("synth-data")
    images = make_synthetic_dataset(pl.n_healthy, pl.n_mass, pl.n_calc, pl.image_size, seed)
    write_dataset(images, out)
    return seed, []


def cmd_extract_patches(args, cfg: RunConfig, out: Path):
    manifest = _require(args.manifest, "dataset manifest")
    images = [im for im in read_dataset(manifest) if im.label == "healthy" or args.include_anomalous]
    if not images:
        raise DataError("no usable images in the manifest")
    seed = cfg.seed_for("extract-patches")
    train, val = split_dataset(images, cfg.pipeline.train_frac, cfg.seed_for("split"))
    for name, subset, s in (("train", train, seed), ("val", val, seed + 1)):
        ps = extract_dataset_patches(subset, cfg.pipeline.patches_per_image, s)
        ps.save(out / f"{name}_patches.aetn", out / f"{name}_patches.csv")
    return seed, [manifest.parent]


def _load_patches(directory: Path, name: str) -> PatchSet | None:
    t, c = directory / f"{name}_patches.aetn", directory / f"{name}_patches.csv"
    if not t.exists():
        return None
    return PatchSet.load(t, c)


def cmd_train_ae(args, cfg: RunConfig, out: Path):
    src = _require(args.patches, "patch directory")
    train = _load_patches(src, "train")
    if train is None:
        raise DataError(f"{src} holds no train_patches.aetn")
    val = _load_patches(src, "val")
    seed = cfg.seed_for("train-ae")
    a = cfg.ae
    ae_cfg = AEConfig(
        channels=cfg.channels,
        latent_dim=a.latent_dim,
        beta=a.beta,
        commitment=a.commitment,
        codebook_size=a.codebook_size,
        embedding_dim=a.embedding_dim,
        seed=seed,
    )
    model = build_ae(a.variant, ae_cfg)
    _, trace = train_ae(model, train, val, a.epochs, a.lr, a.batch, seed)
    model.save(out / "model.ckpt")
    write_trace_csv(out / "loss_trace.csv", trace)
    return seed, [src]


def cmd_encode(args, cfg: RunConfig, out: Path):
    model_path = _require(args.model, "model checkpoint")
    src = _require(args.patches, "patch directory")
    model = AEModel.load(model_path)
    for name in ("train", "val"):
        ps = _load_patches(src, name)
        if ps is not None:
            tensorio.save_tensor(out / f"{name}_latents.aetn", model.encode(ps.patches), tensorio.FLOAT64)
    return cfg.seed_for("encode"), [model_path, src]


def cmd_train_spn(args, cfg: RunConfig, out: Path):
    lat = _require(args.latents, "latent file")
    z = tensorio.load_tensor(lat)
    if z.ndim != 2 or len(z) == 0:
        raise DataError(f"{lat}: expected a nonempty (n, d) latent matrix")
    zv = tensorio.load_tensor(_require(args.val_latents, "validation latents")) if args.val_latents else None
    s = cfg.spn
    seed = cfg.seed_for("train-spn")
    em_cfg = EmConfig(s.em_epochs, s.em_batch, s.em_step, cfg.seed_for("em"), s.em_mode)
    circuit, trace = fit_rat_spn(z, s.depth, s.replicas, s.inputs, s.roots, s.sums or None, seed, em_cfg, zv)
    save_circuit(circuit, out / "circuit.rspn")
    write_ll_trace_csv(out / "ll_trace.csv", trace)
    return seed, [lat] + ([args.val_latents] if args.val_latents else [])


def save_heatmap(path, hm: HeatmapResult, image_id: str) -> None:
    tensorio.write_records(
        path,
        HEATMAP_MAGIC,
        {"image_id": image_id, "stride": hm.stride, "height": hm.image_shape[0], "width": hm.image_shape[1]},
        {"scores": hm.scores, "valid": hm.valid.astype(np.float64)},
    )


def load_heatmap(path) -> tuple[str, HeatmapResult]:
    header, rec = tensorio.read_records(path, HEATMAP_MAGIC)
    stride = int(header["stride"])
    shape = (int(header["height"]), int(header["width"]))
    scores, valid = rec["scores"], rec["valid"] > 0
    return header["image_id"], HeatmapResult(scores, valid, upsample_nearest(scores, shape, stride), stride)


def cmd_score(args, cfg: RunConfig, out: Path):
    manifest = _require(args.manifest, "dataset manifest")
    model_path = _require(args.model, "model checkpoint")
    ae = AEModel.load(model_path)
    circuit, inputs = None, [manifest.parent, model_path]
    if args.circuit:
        circuit = load_circuit(_require(args.circuit, "circuit file"))
        inputs.append(args.circuit)
    seed = cfg.seed_for("score")
    images = read_dataset(manifest)
    if args.label:
        images = [im for im in images if im.label == args.label]
    for img in images:
        try:
            hm = score_image(img, ae, circuit, cfg.pipeline.stride, seed)
        except ValueError as exc:
            raise DataError(str(exc)) from exc
        save_heatmap(out / f"{img.image_id}.heatmap", hm, img.image_id)
        write_pgm(out / f"{img.image_id}_preview.pgm", to_preview(hm.upsampled, img.tissue_mask))
    return seed, inputs


def _heatmaps(directory: Path):
    files = sorted(directory.glob("*.heatmap"))
    if not files:
        raise DataError(f"no .heatmap files in {directory}")
    return [load_heatmap(f) for f in files]


def cmd_segment(args, cfg: RunConfig, out: Path):
    src = _require(args.heatmaps, "heatmap directory")
    for image_id, hm in _heatmaps(src):
        seg = threshold_heatmap(hm, cfg.pipeline.percentile)
        write_pgm(out / f"{image_id}_seg.pgm", seg.astype(np.uint8) * 255)
    return cfg.seeds.seed, [src]


def cmd_evaluate(args, cfg: RunConfig, out: Path):
    from .pipeline.imageio import read_pgm

    src = _require(args.heatmaps, "heatmap directory")
    seg_dir = _require(args.segmentations, "segmentation directory")
    manifest = _require(args.manifest, "dataset manifest")
    truth = {im.image_id: im for im in read_dataset(manifest)}
    sets, preds, gts, healthy, anomalous = [], [], [], [], []
    for image_id, hm in _heatmaps(src):
        if image_id not in truth:
            raise DataError(f"heatmap {image_id} has no entry in {manifest}")
        img = truth[image_id]
        labels = position_labels(img.anomaly_mask, hm.stride)[hm.valid]
        scores = hm.valid_scores()
        sets.append(ScoredPixelSet(image_id, scores, labels))
        preds.append(read_pgm(_require(seg_dir / f"{image_id}_seg.pgm", "segmentation")) > 0)
        gts.append(img.anomaly_mask)
        healthy.append(scores[labels == 0])
        anomalous.append(scores[labels == 1])
    report = evaluate(sets, preds, gts, args.model_name)
    report.write(out / "metrics.txt", out / "per_image.csv")
    hist = export_score_histograms(
        np.concatenate(healthy), np.concatenate(anomalous), cfg.pipeline.hist_bins, out / "score_histogram.csv"
    )
    with open(out / "metrics.txt", "a") as f:
        f.write(f"gap_statistic = {hist.gap:.6f}\n")
    return cfg.seeds.seed, [src, seg_dir, manifest.parent]


def cmd_report(args, cfg: RunConfig, out: Path):
    if args.benchmark:
        from .benchmark import BenchmarkConfig, run_benchmark

        bc = BenchmarkConfig(seed=cfg.seeds.seed)
        result = run_benchmark(bc)
        result.write(out)
        return cfg.seeds.seed, []
    if not args.evals:
        raise UsageError("report needs --evals DIR [DIR ...] or --benchmark")
    rows = []
    for d in args.evals:
        text = _require(Path(d) / "metrics.txt", "metrics file").read_text()
        rows.append(tensorio.parse_header(text))
    keys = ["model", "pixelwise_auc", "imagewise_auc_mean", "imagewise_auc_std", "hausdorff_mean", "hausdorff_std"]
    keys += ["gap_statistic"] if all("gap_statistic" in r for r in rows) else []
    with open(out / "report.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["source"] + keys)
        for d, r in zip(args.evals, rows):
            w.writerow([d] + [r.get(k, "") for k in keys])
    lines = [f"{'model':<16} {'pixel AUC':>9} {'image AUC':>17} {'H (px)':>17}"]
    for r in rows:
        lines.append(
            f"{r.get('model', ''):<16} {float(r['pixelwise_auc']):>9.3f} "
            f"{float(r['imagewise_auc_mean']):>8.3f}+-{float(r['imagewise_auc_std']):<6.3f} "
            f"{float(r['hausdorff_mean']):>8.2f}+-{float(r['hausdorff_std']):<6.2f}"
        )
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    return cfg.seeds.seed, list(args.evals)


COMMANDS = {
    "synth-data": (cmd_synth_data, "generate a seeded synthetic image dataset"),
    "extract-patches": (cmd_extract_patches, "sample interior/contour patches and split by subject"),
    "train-ae": (cmd_train_ae, "train an autoencoder on patches"),
    "encode": (cmd_encode, "encode patches to latent vectors"),
    "train-spn": (cmd_train_spn, "fit a RAT-SPN to latent vectors with EM"),
    "score": (cmd_score, "compute anomaly heatmaps for images"),
    "segment": (cmd_segment, "threshold heatmaps into segmentations"),
    "evaluate": (cmd_evaluate, "compute AUC, Hausdorff and score histograms"),
    "report": (cmd_report, "tabulate evaluations or run the synthetic benchmark"),
}

# flag dest -> (section, key)
OVERRIDES = {
    "seed": ("seeds", "seed"),
    "output_root": ("paths", "output_root"),
    "n_healthy": ("pipeline", "n_healthy"),
    "n_mass": ("pipeline", "n_mass"),
    "n_calc": ("pipeline", "n_calc"),
    "image_size": ("pipeline", "image_size"),
    "patches_per_image": ("pipeline", "patches_per_image"),
    "train_frac": ("pipeline", "train_frac"),
    "stride": ("pipeline", "stride"),
    "percentile": ("pipeline", "percentile"),
    "bins": ("pipeline", "hist_bins"),
    "variant": ("ae", "variant"),
    "epochs": ("ae", "epochs"),
    "lr": ("ae", "lr"),
    "batch": ("ae", "batch"),
    "latent_dim": ("ae", "latent_dim"),
    "channels": ("ae", "channels"),
    "depth": ("spn", "depth"),
    "replicas": ("spn", "replicas"),
    "roots": ("spn", "roots"),
    "sums": ("spn", "sums"),
    "inputs": ("spn", "inputs"),
    "em_epochs": ("spn", "em_epochs"),
    "em_batch": ("spn", "em_batch"),
    "em_step": ("spn", "em_step"),
    "em_mode": ("spn", "em_mode"),
}


# options every run of a subcommand needs (not enforced by argparse so that
# --print-config works on its own)
REQUIRED = {
    "extract-patches": ("manifest",),
    "train-ae": ("patches",),
    "encode": ("model", "patches"),
    "train-spn": ("latents",),
    "score": ("manifest", "model"),
    "segment": ("heatmaps",),
    "evaluate": ("heatmaps", "segmentations", "manifest"),
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("common options")
    g.add_argument("--config", help="INI configuration file ([paths], [seeds], [ae], [spn], [pipeline])")
    g.add_argument("--seed", type=int, help="global seed; stage seeds are derived from it")
    g.add_argument("--output-root", help=f"default parent of run directories (env {OUTPUT_ENV})")
    g.add_argument("--out", help="run directory (default: <output-root>/<command>)")
    g.add_argument("--threads", type=int, help="cap on BLAS/OpenMP threads")
    g.add_argument("--print-config", action="store_true", help="print the resolved configuration and exit")
    g.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="ratspn-ad", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    p = {name: sub.add_parser(name, parents=[common], help=text) for name, (_, text) in COMMANDS.items()}

    p["synth-data"].add_argument("--n-healthy", type=int)
    p["synth-data"].add_argument("--n-mass", type=int)
    p["synth-data"].add_argument("--n-calc", type=int)
    p["synth-data"].add_argument("--image-size", type=int)

    p["extract-patches"].add_argument("--manifest")
    p["extract-patches"].add_argument("--patches-per-image", type=int)
    p["extract-patches"].add_argument("--train-frac", type=float)
    p["extract-patches"].add_argument("--include-anomalous", action="store_true", help="also sample anomalous images")

    p["train-ae"].add_argument("--patches", help="directory from extract-patches")
    p["train-ae"].add_argument("--variant", choices=["CAE", "BVAE", "VQVAE"])
    p["train-ae"].add_argument("--epochs", type=int)
    p["train-ae"].add_argument("--lr", type=float)
    p["train-ae"].add_argument("--batch", type=int)
    p["train-ae"].add_argument("--latent-dim", type=int)
    p["train-ae"].add_argument("--channels", help="comma-separated encoder widths, e.g. 32,64,128")

    p["encode"].add_argument("--model")
    p["encode"].add_argument("--patches")

    p["train-spn"].add_argument("--latents", help="tensor file of shape (n, d)")
    p["train-spn"].add_argument("--val-latents")
    p["train-spn"].add_argument("--depth", type=int)
    p["train-spn"].add_argument("--replicas", type=int)
    p["train-spn"].add_argument("--roots", type=int)
    p["train-spn"].add_argument("--sums", type=int)
    p["train-spn"].add_argument("--inputs", type=int)
    p["train-spn"].add_argument("--em-epochs", type=int)
    p["train-spn"].add_argument("--em-batch", type=int)
    p["train-spn"].add_argument("--em-step", type=float)
    p["train-spn"].add_argument("--em-mode", choices=["stochastic", "full_batch"])

    p["score"].add_argument("--manifest")
    p["score"].add_argument("--model")
    p["score"].add_argument("--circuit")
    p["score"].add_argument("--label", choices=["healthy", "mass", "calcification"])
    p["score"].add_argument("--stride", type=int)

    p["segment"].add_argument("--heatmaps")
    p["segment"].add_argument("--percentile", type=float)

    p["evaluate"].add_argument("--heatmaps")
    p["evaluate"].add_argument("--segmentations")
    p["evaluate"].add_argument("--manifest")
    p["evaluate"].add_argument("--model-name", default="")
    p["evaluate"].add_argument("--bins", type=int)

    p["report"].add_argument("--evals", nargs="+")
    p["report"].add_argument("--benchmark", action="store_true", help="run the end-to-end synthetic benchmark")
    return parser


def _thread_limit(n):
    if n is None:
        return nullcontext()
    if n < 1:
        raise UsageError("--threads must be >= 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    out = None
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        overrides = {OVERRIDES[k]: v for k, v in vars(args).items() if k in OVERRIDES and v is not None}
        cfg = load_config(args.config, overrides)
        if args.print_config:
            sys.stdout.write(cfg.to_text())
            return EXIT_OK
        missing = [f"--{name.replace('_', '-')}" for name in REQUIRED.get(args.command, ()) if getattr(args, name) is None]
        if missing:
            raise UsageError(f"ratspn-ad {args.command}: error: missing required option(s) {', '.join(missing)}")
        out = Path(args.out) if args.out else Path(cfg.paths.output_root) / args.command
        handler = COMMANDS[args.command][0]
        with _thread_limit(args.threads), run_lock(out):
            seed, inputs = handler(args, cfg, out)
            write_manifest(out, args.command, cfg, seed, inputs)
        return EXIT_OK
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE
    except FloatingPointError as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            (out / "diagnostics.txt").write_text(
                f"{type(exc).__name__}: {exc}\n\n" + "".join(traceback.format_exception(exc))
            )
        return EXIT_NUMERICAL
    except (DataError, ConfigError, ValueError, OSError, RuntimeError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
