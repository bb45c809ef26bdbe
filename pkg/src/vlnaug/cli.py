"""Command-line interface.

Subcommands: ingest, augment, cropmix, schedule, eval, report.
Exit codes: 0 success, 2 config error, 3 provider error, 4 validation error.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import __version__
from .corpus import ArtifactStore, load_connectivity, load_dataset, load_panorama, save_panorama
from .cropmix import crop_mix
from .errors import VlnaugError
from .navmetrics import EpisodeResult, evaluate, evaluate_many
from .pipeline import RunConfig, report_from_run, run_pipeline
from .schedule import (
    CropmixConfig,
    ManifestItem,
    ResumeMarker,
    TrainerHints,
    build_stage1,
    build_stage2,
)


def _fail(exc: VlnaugError) -> None:
    click.echo(f"error: {exc}", err=True)
    sys.exit(exc.exit_code)


@click.group()
@click.version_option(__version__)
@click.option("-v", "--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool) -> None:
    """Rewriting-based augmentation toolkit for navigation datasets."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command()
@click.argument("path", type=click.Path(exists=True, path_type=Path))
@click.option("--split", default="train", show_default=True)
@click.option("--connectivity-dir", type=click.Path(exists=True, path_type=Path))
def ingest(path: Path, split: str, connectivity_dir: Path | None) -> None:
    """Load and validate a dataset split; print counts."""
    try:
        pairs = load_dataset(path, split, connectivity_dir=connectivity_dir)
    except VlnaugError as exc:
        _fail(exc)
    unique = len({p.path_id for p in pairs})
    steps = [p.num_steps for p in pairs]
    click.echo(json.dumps({
        "pairs": len(pairs),
        "unique_trajectories": unique,
        "instructions": sum(len(p.instructions) for p in pairs),
        "min_steps": min(steps) if steps else 0,
        "max_steps": max(steps) if steps else 0,
    }, indent=2))


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, path_type=Path),
              help="Run configuration JSON.")
@click.option("--seed", type=int, help="Override the config seed.")
@click.option("--workers", type=int, help="Override the worker count.")
@click.option("--resume/--no-resume", default=True, show_default=True,
              help="Reuse the journal and provider-call cache.")
def augment(config_path: Path, seed: int | None, workers: int | None, resume: bool) -> None:
    """Run the augmentation pipeline per the config file."""
    try:
        raw = json.loads(config_path.read_text(encoding="utf-8"))
        if seed is not None:
            raw["seed"] = seed
        if workers is not None:
            raw["workers"] = workers
        raw["resume"] = resume
        config = RunConfig.from_json(raw)
        report = run_pipeline(config)
    except VlnaugError as exc:
        _fail(exc)
    click.echo(json.dumps(report, indent=2, sort_keys=True))


@main.command("cropmix")
@click.argument("panoramas", nargs=-1, required=True,
                type=click.Path(exists=True, path_type=Path))
@click.option("--count", default=3, show_default=True)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out-dir", required=True, type=click.Path(path_type=Path))
@click.option("--snap-cells", type=int,
              help="Snap strip boundaries to width/N multiples.")
def cropmix_cmd(panoramas, count: int, seed: int, out_dir: Path, snap_cells: int | None) -> None:
    """Recombine a pool of panorama PNGs into new panoramas."""
    try:
        pool = [load_panorama(p, source="generated") for p in panoramas]
        outs, plans = crop_mix(pool, count=count, seed=seed, snap_cells=snap_cells)
    except VlnaugError as exc:
        _fail(exc)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, (pano, plan) in enumerate(zip(outs, plans)):
        save_panorama(pano, out_dir / f"cropmix_{i}.png")
        (out_dir / f"cropmix_{i}.plan.json").write_text(
            json.dumps(plan.to_json(), indent=2) + "\n", encoding="utf-8"
        )
    click.echo(f"wrote {count} panoramas to {out_dir}")


@main.command("schedule")
@click.option("--run-root", required=True, type=click.Path(exists=True, path_type=Path),
              help="Output root of a finished augmentation run.")
@click.option("--out-dir", required=True, type=click.Path(path_type=Path))
@click.option("--ratio", default="1:3", show_default=True,
              help="original:rewritten mix for stage 1.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--epochs", default=1, show_default=True, type=int)
@click.option("--cropmix/--no-cropmix", "use_cropmix", default=True, show_default=True)
@click.option("--max-iterations", default=20_000, show_default=True, type=int)
@click.option("--batch-size", default=8, show_default=True, type=int)
@click.option("--learning-rate", default=1e-5, show_default=True, type=float)
def schedule_cmd(run_root: Path, out_dir: Path, ratio: str, seed: int, epochs: int,
                 use_cropmix: bool, max_iterations: int, batch_size: int,
                 learning_rate: float) -> None:
    """Emit the two-stage training manifests from a finished run."""
    try:
        inputs_path = run_root / "schedule_inputs.json"
        if not inputs_path.exists():
            raise VlnaugError(f"no schedule inputs at {inputs_path}; run augment first")
        data = json.loads(inputs_path.read_text(encoding="utf-8"))
        originals = [ManifestItem(**item) for item in data["originals"]]
        rewritten = [ManifestItem(**item) for item in data["rewritten"]]
        parts = ratio.split(":")
        ratio_t = (int(parts[0]), int(parts[1]))
        store = ArtifactStore(run_root)
        hints = TrainerHints(
            max_iterations=max_iterations, batch_size=batch_size, learning_rate=learning_rate
        )
        stage1 = build_stage1(
            originals, rewritten, ratio=ratio_t, seed=seed, epochs=epochs,
            cropmix_config=CropmixConfig(enabled=use_cropmix, store=store)
            if use_cropmix else None,
            hints=hints,
        )
        stage2 = build_stage2(
            originals, seed=seed,
            resume=ResumeMarker(stage1_best_checkpoint_ref="<trainer-supplied>"),
            hints=hints,
        )
    except VlnaugError as exc:
        _fail(exc)
    out_dir.mkdir(parents=True, exist_ok=True)
    stage1.write(out_dir / "stage1.jsonl")
    stage2.write(out_dir / "stage2.jsonl")
    click.echo(json.dumps({
        "stage1_entries": len(stage1.entries),
        "stage2_entries": len(stage2.entries),
        "out_dir": str(out_dir),
    }, indent=2))


@main.command("eval")
@click.argument("episodes_file", type=click.Path(exists=True, path_type=Path))
@click.option("--connectivity-dir", required=True,
              type=click.Path(exists=True, path_type=Path))
@click.option("--success-radius", default=3.0, show_default=True, type=float)
@click.option("--out", "out_path", type=click.Path(path_type=Path),
              help="Write metric JSON here instead of stdout.")
def eval_cmd(episodes_file: Path, connectivity_dir: Path, success_radius: float,
             out_path: Path | None) -> None:
    """Evaluate episodes (JSONL of {scan, predicted_path, gt_path})."""
    try:
        graphs = {}
        episodes = []
        per_episode = []
        for line in episodes_file.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            scan = rec["scan"]
            if scan not in graphs:
                graphs[scan] = load_connectivity(
                    connectivity_dir / f"{scan}_connectivity.json", scan
                )
            ep = EpisodeResult(
                predicted_path=tuple(rec["predicted_path"]),
                gt_path=tuple(rec["gt_path"]),
                graph=graphs[scan],
            )
            episodes.append(ep)
            per_episode.append(
                {"scan": scan, **evaluate(ep, success_radius_m=success_radius)}
            )
        means = evaluate_many(episodes, success_radius_m=success_radius)
    except VlnaugError as exc:
        _fail(exc)
    result = {"episodes": per_episode, "means": means, "count": len(episodes)}
    payload = json.dumps(result, indent=2, sort_keys=True) + "\n"
    if out_path:
        out_path.write_text(payload, encoding="utf-8")
        click.echo(f"wrote {out_path}")
    else:
        click.echo(payload, nl=False)


@main.command("report")
@click.argument("run_root", type=click.Path(exists=True, path_type=Path))
def report_cmd(run_root: Path) -> None:
    """Print the report of a finished augmentation run."""
    try:
        report = report_from_run(run_root)
    except VlnaugError as exc:
        _fail(exc)
    click.echo(json.dumps(report, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
