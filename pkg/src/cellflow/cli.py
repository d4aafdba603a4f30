"""Batch entry points: synthesize corpora, train, decompose, generate,
evaluate, rank, simulate operations, and serve the HTTP facade.

Every command is reproducible bit-for-bit from its flags and seeds, writes
its data outputs to files (progress goes to stderr), and drops a run
manifest next to each output. Exit codes: 0 success, 2 usage, 3 data
validation, 4 checkpoint version, 5 internal.
"""
from __future__ import annotations

import functools
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import __version__
from .checkpoints import load_fusion, load_generator, save_fusion, save_generator
from .corpus import make_corpus, make_fleet, make_grid
from .decomposition import decompose_targets, true_peak_hour
from .errors import CellflowError, CheckpointVersionError, ValidationError
from .formats import (
    FORMAT_VERSION,
    control_doc,
    dump_doc,
    generation_doc,
    ranking_doc,
    read_embeddings,
    read_fleet,
    read_grid,
    read_traffic,
    report_doc,
    write_doc,
    write_embeddings,
    write_fleet,
    write_grid,
    write_traffic,
)
from .fusion import FusionConfig, FusionModel, embed_location, train_fusion
from .generator import (
    GeneratorConfig,
    GeneratorModel,
    build_examples,
    generate,
    generate_many,
    peak_head,
    site_rng,
    train_generator,
)
from .metrics import DEFAULT_BINS, evaluate_corpus
from .nn import PortableRng
from .operations import LoadTrace, periodic_target, simulate_control
from .planning import CandidateCell, FeasibilityConfig, rank_topk


def _fail(message: str, code: int):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except ValidationError as exc:
            _fail(str(exc), 3)
        except CheckpointVersionError as exc:
            _fail(str(exc), 4)
        except CellflowError as exc:
            _fail(str(exc), 5)
        except Exception as exc:  # noqa: BLE001 - map anything unexpected to exit 5
            _fail(f"internal: {exc!r}", 5)

    return wrapper


def _write_manifest(anchor: Path, command: str, params: dict, started: float,
                    outputs: list[str]) -> None:
    manifest = {
        "format": "cellflow/manifest",
        "version": FORMAT_VERSION,
        "tool_version": __version__,
        "command": command,
        "params": params,
        "outputs": outputs,
        "wall_clock_s": round(time.time() - started, 3),
    }
    path = anchor / "manifest.json" if anchor.is_dir() else Path(str(anchor) + ".manifest.json")
    write_doc(path, manifest)


@click.group()
@click.version_option(__version__)
def main():
    """Spatially conditional traffic generation for planning and operations."""


@main.command()
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--sites", default=200, show_default=True)
@click.option("--seed", default=42, show_default=True)
@click.option("--noise", type=float, default=None, help="Override zone residual noise scale.")
@click.option("--perturbation", default=0.05, show_default=True)
@click.option("--grid-cells", default=10, show_default=True)
@click.option("--fleet-sites", default=4, show_default=True)
@guarded
def synth(out, sites, seed, noise, perturbation, grid_cells, fleet_sites):
    """Write a synthetic corpus: traffic, embeddings, candidate grid, fleet."""
    started = time.time()
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    bundle = make_corpus(n_sites=sites, seed=seed, noise_scale=noise,
                         perturbation=perturbation)
    write_traffic(out_dir / "traffic.jsonl", bundle.traffic, zones=bundle.zones,
                  extra={"scale": bundle.scale, "seed": seed})
    write_embeddings(out_dir / "embeddings.jsonl", bundle.embeddings, 32, 64)
    grid = make_grid(n_cells=grid_cells, seed=seed, perturbation=perturbation)
    write_grid(out_dir / "grid.jsonl", grid, 32, 64)
    write_fleet(out_dir / "fleet.jsonl", make_fleet(n_sites=fleet_sites, seed=seed))
    click.echo(f"synthesized {sites} sites, {grid_cells} grid cells, "
               f"{fleet_sites} fleet sites -> {out_dir}", err=True)
    _write_manifest(out_dir, "synth",
                    {"sites": sites, "seed": seed, "noise": noise,
                     "perturbation": perturbation, "grid_cells": grid_cells,
                     "fleet_sites": fleet_sites},
                    started,
                    ["traffic.jsonl", "embeddings.jsonl", "grid.jsonl", "fleet.jsonl"])


@main.command("train-fusion")
@click.option("--embeddings", "embeddings_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--epochs", default=50, show_default=True)
@click.option("--seed", default=42, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@guarded
def train_fusion_cmd(embeddings_path, epochs, seed, out):
    """Train the masked multimodal fusion model."""
    started = time.time()
    sites, header = read_embeddings(embeddings_path)
    config = FusionConfig(embed_dim=int(header.get("visual_dim", 32)),
                          poi_dim=int(header.get("poi_dim", 64)), seed=seed)
    model = FusionModel(config)
    curve = train_fusion(model, sites, epochs, PortableRng(seed).spawn("train-fusion"))
    save_fusion(out, model, train_meta={"seed": seed, "epochs": epochs,
                                        "embeddings": str(embeddings_path)})
    click.echo(f"fusion loss {curve[0]:.4f} -> {curve[-1]:.4f} over {epochs} epochs", err=True)
    _write_manifest(Path(out), "train-fusion",
                    {"embeddings": str(embeddings_path), "epochs": epochs, "seed": seed},
                    started, [str(out)])


def _split_sites(site_ids: list[str], seed: int, holdout_fraction: float,
                 train_fraction: float) -> tuple[list[str], list[str]]:
    if not (0 <= holdout_fraction < 1):
        raise ValidationError("holdout fraction must lie in [0, 1)")
    if not (0 < train_fraction <= 1):
        raise ValidationError("train fraction must lie in (0, 1]")
    order = PortableRng(seed).spawn("split").permutation(len(site_ids))
    n_holdout = int(round(len(site_ids) * holdout_fraction))
    holdout = sorted(site_ids[i] for i in order[:n_holdout])
    train_pool = [site_ids[i] for i in order[n_holdout:]]
    n_train = max(1, int(round(len(train_pool) * train_fraction)))
    return sorted(train_pool[:n_train]), holdout


def _embed_sites(fusion_model, embeddings) -> dict[str, np.ndarray]:
    return {e.site_id: embed_location(fusion_model, e).vector for e in embeddings}


@main.command("train-gen")
@click.option("--traffic", "traffic_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--embeddings", "embeddings_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--fusion-checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--epochs", default=100, show_default=True)
@click.option("--seed", default=42, show_default=True)
@click.option("--batch-size", default=16, show_default=True)
@click.option("--holdout-fraction", default=0.2, show_default=True)
@click.option("--train-fraction", default=1.0, show_default=True,
              help="Fraction of the training split actually used (data-size sweeps).")
@click.option("--disable-peak-head", is_flag=True, default=False,
              help="Ablate the peak-hour classifier (residual level gets no peak input).")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@guarded
def train_gen(traffic_path, embeddings_path, fusion_checkpoint, epochs, seed,
              batch_size, holdout_fraction, train_fraction, disable_peak_head, out):
    """Train the three-level flow-matching generator."""
    started = time.time()
    series, _ = read_traffic(traffic_path)
    embeddings, _ = read_embeddings(embeddings_path)
    fusion_model = load_fusion(fusion_checkpoint)
    contexts = _embed_sites(fusion_model, embeddings)
    by_id = {s.site_id: s for s in series}
    train_ids, holdout_ids = _split_sites(sorted(by_id), seed, holdout_fraction, train_fraction)
    examples = build_examples({k: contexts[k] for k in train_ids},
                              {k: by_id[k] for k in train_ids})
    config = GeneratorConfig(context_dim=fusion_model.config.embed_dim,
                             peak_head_enabled=not disable_peak_head, seed=seed)
    model = GeneratorModel(config)
    history = train_generator(model, examples, epochs,
                              PortableRng(seed).spawn("train-gen"), batch_size=batch_size)
    model.train_meta = {
        "seed": seed, "epochs": epochs, "batch_size": batch_size,
        "train_sites": train_ids, "holdout_sites": holdout_ids,
        "train_fraction": train_fraction, "holdout_fraction": holdout_fraction,
        "traffic": str(traffic_path), "embeddings": str(embeddings_path),
        "fusion_checkpoint": str(fusion_checkpoint),
        "peak_head_enabled": not disable_peak_head,
    }
    save_generator(out, model)
    click.echo(f"generator total loss {history[0]['total']:.4f} -> {history[-1]['total']:.4f} "
               f"({len(train_ids)} train / {len(holdout_ids)} holdout sites)", err=True)
    _write_manifest(Path(out), "train-gen",
                    {"traffic": str(traffic_path), "embeddings": str(embeddings_path),
                     "fusion_checkpoint": str(fusion_checkpoint), "epochs": epochs,
                     "seed": seed, "batch_size": batch_size,
                     "holdout_fraction": holdout_fraction, "train_fraction": train_fraction,
                     "disable_peak_head": disable_peak_head},
                    started, [str(out)])


@main.command()
@click.option("--traffic", "traffic_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--site", required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@guarded
def decompose(traffic_path, site, out):
    """Write the daily/weekly/periodic/residual targets of one series."""
    started = time.time()
    series, _ = read_traffic(traffic_path)
    match = next((s for s in series if s.site_id == site), None)
    if match is None:
        raise ValidationError(f"site {site!r} not found in {traffic_path}")
    targets = decompose_targets(match)
    write_doc(out, {
        "format": "cellflow/decomposition", "version": FORMAT_VERSION,
        "site_id": site,
        "daily": targets.daily, "weekly": targets.weekly,
        "periodic": targets.periodic, "residual": targets.residual,
        "peak_hour": true_peak_hour(targets.daily),
    })
    _write_manifest(Path(out), "decompose",
                    {"traffic": str(traffic_path), "site": site}, started, [str(out)])


def _load_models(fusion_checkpoint, gen_checkpoint):
    return load_fusion(fusion_checkpoint), load_generator(gen_checkpoint)


@main.command("generate")
@click.option("--gen-checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--fusion-checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--embeddings", "embeddings_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Site embeddings file (use with --site).")
@click.option("--grid", "grid_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Candidate grid file (use with --cell).")
@click.option("--site", default=None)
@click.option("--cell", default=None)
@click.option("--seed", default=42, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@guarded
def generate_cmd(gen_checkpoint, fusion_checkpoint, embeddings_path, grid_path,
                 site, cell, seed, out):
    """Generate one 672-hour sequence for a site or candidate cell."""
    started = time.time()
    fusion_model, gen_model = _load_models(fusion_checkpoint, gen_checkpoint)
    if (site is None) == (cell is None):
        raise ValidationError("provide exactly one of --site or --cell")
    if site is not None:
        if embeddings_path is None:
            raise ValidationError("--site requires --embeddings")
        embeddings, _ = read_embeddings(embeddings_path)
        emb = next((e for e in embeddings if e.site_id == site), None)
        if emb is None:
            raise ValidationError(f"site {site!r} not found in {embeddings_path}")
    else:
        if grid_path is None:
            raise ValidationError("--cell requires --grid")
        cells, _ = read_grid(grid_path)
        rec = next((c for c in cells if c.cell_id == cell), None)
        if rec is None:
            raise ValidationError(f"cell {cell!r} not found in {grid_path}")
        emb = rec.embedding
    context = embed_location(fusion_model, emb)
    gen = generate(gen_model, context.vector, site_rng(seed, emb.site_id),
                   site_id=emb.site_id)
    gen.seed = seed
    write_doc(out, generation_doc(gen))
    _write_manifest(Path(out), "generate",
                    {"gen_checkpoint": str(gen_checkpoint),
                     "fusion_checkpoint": str(fusion_checkpoint),
                     "site": site, "cell": cell, "seed": seed}, started, [str(out)])


@main.command()
@click.option("--real", "real_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--generated", "generated_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--traffic", "traffic_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--embeddings", "embeddings_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--fusion-checkpoint", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--gen-checkpoint", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--sites", "which_sites", type=click.Choice(["holdout", "all"]), default="holdout",
              show_default=True)
@click.option("--seed", default=42, show_default=True)
@click.option("--bins", default=DEFAULT_BINS, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@guarded
def evaluate(real_path, generated_path, traffic_path, embeddings_path,
             fusion_checkpoint, gen_checkpoint, which_sites, seed, bins, out):
    """Report JSD / JSD_diff / RMSE / MAE, either between two traffic files or
    between a checkpointed model's generations and its corpus."""
    started = time.time()
    extras: dict = {}
    if real_path is not None and generated_path is not None:
        real_series, _ = read_traffic(real_path)
        gen_series, _ = read_traffic(generated_path)
        real = {s.site_id: s.values for s in real_series}
        gen = {s.site_id: s.values for s in gen_series}
        params = {"real": str(real_path), "generated": str(generated_path), "bins": bins}
    elif traffic_path and embeddings_path and fusion_checkpoint and gen_checkpoint:
        fusion_model, gen_model = _load_models(fusion_checkpoint, gen_checkpoint)
        series, _ = read_traffic(traffic_path)
        embeddings, _ = read_embeddings(embeddings_path)
        by_id = {s.site_id: s for s in series}
        if which_sites == "holdout":
            ids = gen_model.train_meta.get("holdout_sites") or sorted(by_id)
        else:
            ids = sorted(by_id)
        contexts = {e.site_id: embed_location(fusion_model, e).vector
                    for e in embeddings if e.site_id in set(ids)}
        generations = generate_many(gen_model, contexts, seed)
        real = {k: by_id[k].values for k in generations}
        gen = {k: g.traffic for k, g in generations.items()}
        if gen_model.config.peak_head_enabled:
            correct = sum(
                1 for k, g in generations.items()
                if g.peak_hour == true_peak_hour(decompose_targets(by_id[k]).daily)
            )
            extras["peak_accuracy"] = correct / len(generations)
        extras["sites"] = which_sites
        params = {"traffic": str(traffic_path), "embeddings": str(embeddings_path),
                  "fusion_checkpoint": str(fusion_checkpoint),
                  "gen_checkpoint": str(gen_checkpoint), "sites": which_sites,
                  "seed": seed, "bins": bins}
    else:
        raise ValidationError(
            "evaluate needs either --real/--generated or "
            "--traffic/--embeddings/--fusion-checkpoint/--gen-checkpoint"
        )
    report = evaluate_corpus(real, gen, bins=bins)
    write_doc(out, report_doc(report, extras))
    click.echo(f"jsd={report.jsd:.4f} jsd_diff={report.jsd_diff:.4f} "
               f"rmse={report.rmse:.4f} mae={report.mae:.4f}", err=True)
    _write_manifest(Path(out), "evaluate", params, started, [str(out)])


@main.command()
@click.option("--grid", "grid_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--fusion-checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--gen-checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--k", default=3, show_default=True)
@click.option("--utility", default="lsi", show_default=True)
@click.option("--seed", default=42, show_default=True)
@click.option("--min-dist-km", type=float, default=None)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@guarded
def rank(grid_path, fusion_checkpoint, gen_checkpoint, k, utility, seed, min_dist_km, out):
    """Rank feasible candidate cells by a utility of their generated traffic."""
    started = time.time()
    fusion_model, gen_model = _load_models(fusion_checkpoint, gen_checkpoint)
    cells, _ = read_grid(grid_path)
    result = rank_grid(fusion_model, gen_model, cells, k, utility, seed,
                       FeasibilityConfig(min_dist_km=min_dist_km))
    write_doc(out, ranking_doc(result))
    _write_manifest(Path(out), "rank",
                    {"grid": str(grid_path), "k": k, "utility": utility, "seed": seed,
                     "min_dist_km": min_dist_km}, started, [str(out)])


def rank_grid(fusion_model, gen_model, grid_cells, k, utility, seed,
              feasibility: FeasibilityConfig = FeasibilityConfig()):
    """Shared CLI/service ranking path (one source of truth)."""
    contexts = {c.cell_id: embed_location(fusion_model, c.embedding).vector
                for c in grid_cells}
    candidates = [
        CandidateCell(cell_id=c.cell_id, lat=c.lat, lon=c.lon,
                      feasible_flag=c.feasible,
                      dist_to_existing_km=c.dist_to_existing_km,
                      payload=contexts[c.cell_id])
        for c in grid_cells
    ]

    def generate_fn(cell, rng):
        return generate(gen_model, cell.payload, rng, site_id=cell.cell_id).traffic

    return rank_topk(candidates, k, utility, generate_fn, seed, feasibility)


@main.command("ops-sim")
@click.option("--fleet", "fleet_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--site", required=True)
@click.option("--window", default=6, show_default=True)
@click.option("--threshold", default=1.0, show_default=True,
              help="Volatility threshold as a multiple of the trace's global sigma.")
@click.option("--target", "target_spec", default="periodic", show_default=True,
              help="'periodic' or a path to a generation/traffic document.")
@click.option("--sweep", default=None,
              help="Comma-separated thresholds to evaluate instead of a single one.")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@guarded
def ops_sim(fleet_path, site, window, threshold, target_spec, sweep, out):
    """Simulate volatility-gated energy control for one fleet site."""
    started = time.time()
    fleet, _ = read_fleet(fleet_path)
    match = next((s for s in fleet if s.site_id == site), None)
    if match is None:
        raise ValidationError(f"site {site!r} not found in {fleet_path}")
    trace = LoadTrace(site_id=site, rho=match.values / match.capacity)
    target = resolve_control_target(trace, target_spec)
    if sweep:
        fractions = [float(x) for x in sweep.split(",") if x.strip()]
        entries = []
        for frac in fractions:
            plan = simulate_control(trace, target, window, frac)
            entries.append({"threshold": frac, "eta": plan.eta, "qoe": plan.qoe,
                            "windows": [[s, e] for s, e in plan.windows]})
        write_doc(out, {"format": "cellflow/control-sweep", "version": FORMAT_VERSION,
                        "site_id": site, "window_hours": window, "target": target_spec,
                        "entries": entries})
    else:
        plan = simulate_control(trace, target, window, threshold)
        write_doc(out, control_doc(plan, extras={"target": target_spec}))
        click.echo(f"eta={plan.eta:.4f} qoe={plan.qoe:.4f} windows={plan.windows}", err=True)
    _write_manifest(Path(out), "ops-sim",
                    {"fleet": str(fleet_path), "site": site, "window": window,
                     "threshold": threshold, "target": target_spec, "sweep": sweep},
                    started, [str(out)])


def resolve_control_target(trace: LoadTrace, target_spec: str) -> np.ndarray:
    """Control target source: the trace's own periodic backbone, or a file."""
    if target_spec == "periodic":
        return periodic_target(trace)
    doc_path = Path(target_spec)
    if not doc_path.exists():
        raise ValidationError(f"control target {target_spec!r} is neither 'periodic' nor a file")
    import json

    doc = json.loads(doc_path.read_text(encoding="utf-8"))
    if "traffic" not in doc:
        raise ValidationError(f"{target_spec}: no 'traffic' field to use as control target")
    target = np.asarray(doc["traffic"], dtype=np.float64)
    if target.shape != trace.rho.shape:
        raise ValidationError("control target length does not match the trace")
    return np.clip(target, 0.0, 1.0)


@main.command()
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
@click.option("--fusion-checkpoint", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--gen-checkpoint", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--grid", "grid_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--fleet", "fleet_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--ui", "ui_path", type=click.Path(file_okay=False), default=None)
@guarded
def serve(host, port, fusion_checkpoint, gen_checkpoint, grid_path, fleet_path, seed, ui_path):
    """Run the HTTP facade (flags override CELLFLOW_* environment variables)."""
    import uvicorn

    from .service import ServiceConfig, create_app

    config = ServiceConfig.from_env(
        host=host, port=port,
        fusion_checkpoint=fusion_checkpoint, generator_checkpoint=gen_checkpoint,
        grid_path=grid_path, fleet_path=fleet_path, default_seed=seed, ui_path=ui_path,
    )
    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
