#!/usr/bin/env python3
"""
SALF-MOS CLI - Command-line interface for the MOS prediction toolkit

Covers the whole workflow: feature extraction, training, evaluation,
prediction, ablation sweeps and the HTTP inference service.
"""

import csv
import logging
import sys
from contextlib import contextmanager
from dataclasses import replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence

import typer
import yaml
from rich.console import Console
from rich.logging import RichHandler
from rich.progress import Progress, SpinnerColumn, TextColumn
from rich.table import Table

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from core import __version__
from core.config import (
    CepstralConfig,
    Command,
    FeatureKind,
    Pooling,
    RunSpec,
    SalfConfig,
    Settings,
    TrainConfig,
)
from core.dataset import (
    FeatureSet,
    Manifest,
    extractor_loader,
    load_manifest,
    resolve_feature_set,
    write_manifest,
)
from core.errors import SalfError
from core.features import FEATURE_MAGIC, write_feature_file
from core.job_runner import Job, JobRunner
from core.metrics import METRIC_NAMES, EvalReport, evaluate
from core.model import load_checkpoint, save_checkpoint
from core.run_store import new_run_key, open_store
from core.service import run_service, score_upload
from core.training import DataSplit, split_ids, train

app = typer.Typer(
    name="salfmos",
    help="SALF-MOS - small speech quality (MOS) prediction toolkit",
    add_completion=False,
)

console = Console()
logger = logging.getLogger("salfmos")

settings = Settings()


class Axis(str, Enum):
    DEPTH = "depth"
    FEATURE = "feature"


class SplitName(str, Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"
    ALL = "all"


def configure_logging(level: str) -> None:
    logging.basicConfig(
        level=level.upper(),
        format="%(message)s",
        handlers=[RichHandler(console=console, rich_tracebacks=True)],
        force=True,
    )


@contextmanager
def handle_errors() -> Iterator[None]:
    """Translate toolkit and validation errors into exit code 1."""
    try:
        yield
    except typer.Exit:
        raise
    except (SalfError, ValueError, KeyError) as e:
        console.print(f"[red]Error: {e}[/red]")
        logger.debug("Command failed", exc_info=True)
        raise typer.Exit(1)


def _fmt(value: Optional[float]) -> str:
    return "undefined" if value is None else f"{value:.4f}"


def _csv_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_table_csv(path: Path, columns: Sequence[str], rows: List[Sequence[Any]]):
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_csv_cell(v) for v in row])


def metrics_table(title: str, report: EvalReport) -> Table:
    table = Table(title=title, show_header=True)
    for name in ("MSE", "LCC", "SRCC", "KTAU", "KTAU-b"):
        table.add_column(name, style="cyan", justify="right")
    table.add_row(*(_fmt(v) for v in report.metrics().values()))
    return table


def _build_spec(
    command: Command,
    paths: Dict[str, Optional[Path]],
    config_file: Optional[Path],
    **flags: Any,
) -> RunSpec:
    return RunSpec.from_sources(command, paths, flags, config_file)


def _resolve(manifest: Manifest, kind: FeatureKind) -> FeatureSet:
    with Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        console=console,
        transient=True,
    ) as progress:
        progress.add_task(
            f"Resolving {kind.value} features for {len(manifest)} utterances...",
            total=None,
        )
        return resolve_feature_set(
            manifest, kind, CepstralConfig(), workers=settings.workers
        )


def _record_run(command: str, record: Dict[str, Any]) -> None:
    store = open_store(settings.runs_dir)
    key = new_run_key(command)
    if store.save(key, record):
        logger.info(f"Run record saved as {key}")


# Options shared by several commands

ManifestOpt = typer.Option(..., "--manifest", help="Manifest CSV")
ConfigOpt = typer.Option(None, "--config", help="YAML file with overrides")
KindOpt = typer.Option(None, "--feature-kind", help="Feature source kind")
DepthOpt = typer.Option(None, "--depth", help="Number of Double Convolutions")
InputDimOpt = typer.Option(
    None, "--input-dim", help="Feature width (defaults to the data's)"
)
PoolingOpt = typer.Option(None, "--pooling", help="Downsampling: max or avg")
LrOpt = typer.Option(None, "--lr", help="SGD learning rate")
BatchOpt = typer.Option(None, "--batch-size", help="Mini-batch size")
PatienceOpt = typer.Option(None, "--patience", help="Early stopping patience")
EpochsOpt = typer.Option(None, "--max-epochs", help="Epoch cap")
SeedOpt = typer.Option(None, "--seed", help="Seed for split, init and shuffling")
StandardizeOpt = typer.Option(
    None, "--standardize/--no-standardize", help="Standardize input features"
)


@app.command()
def features(
    manifest: Path = ManifestOpt,
    feature_kind: FeatureKind = typer.Option(
        ..., "--feature-kind", help="Feature source kind"
    ),
    out: Path = typer.Option(..., "--out", help="Directory for SALF-F1 files"),
    out_manifest: Optional[Path] = typer.Option(
        None, "--out-manifest", help="Rewritten manifest (default OUT/manifest.csv)"
    ),
):
    """Extract one SALF-F1 feature file per utterance."""
    with handle_errors():
        spec = RunSpec(
            command=Command.FEATURES,
            paths={"manifest": manifest, "out": out},
            overrides={"feature_kind": feature_kind},
        )
        kind = spec.salf_config().feature_kind
        loaded = load_manifest(manifest, feature_kind=kind)
        out.mkdir(parents=True, exist_ok=True)
        extractor = extractor_loader().create(kind, CepstralConfig())

        def extract_one(utt):
            target = out / f"{utt.id.replace('/', '_')}.slf"
            write_feature_file(extractor.extract(utt), target)
            return target

        jobs = [Job(id=u.id, func=extract_one, args=(u,)) for u in loaded]
        batch = JobRunner(settings.workers).run_batch_sync(jobs)

        if not batch.ok:
            table = Table(title="Failed utterances", show_header=True)
            table.add_column("Utterance", style="cyan")
            table.add_column("Error", style="red")
            for job in batch.failures:
                table.add_row(job.id, str(job.error))
            console.print(table)
            console.print(
                f"[red]{len(batch.failures)} of {len(jobs)} utterances failed[/red]"
            )
            raise typer.Exit(1)

        updated = Manifest(
            tuple(
                replace(u, feature_path=path)
                for u, path in zip(loaded, batch.results)
            ),
            loaded.dataset_name,
            kind,
        )
        target_manifest = out_manifest or out / "manifest.csv"
        write_manifest(updated, target_manifest)
        console.print(
            f"[green]Wrote {len(jobs)} {kind.value} feature files to {out}; "
            f"manifest {target_manifest}[/green]"
        )


@app.command(name="train")
def train_command(
    manifest: Path = ManifestOpt,
    out: Path = typer.Option(..., "--out", help="Checkpoint path"),
    config: Optional[Path] = ConfigOpt,
    feature_kind: Optional[FeatureKind] = KindOpt,
    depth: Optional[int] = DepthOpt,
    input_dim: Optional[int] = InputDimOpt,
    pooling: Optional[Pooling] = PoolingOpt,
    lr: Optional[float] = LrOpt,
    batch_size: Optional[int] = BatchOpt,
    patience: Optional[int] = PatienceOpt,
    max_epochs: Optional[int] = EpochsOpt,
    seed: Optional[int] = SeedOpt,
    standardize: Optional[bool] = StandardizeOpt,
):
    """Train a model, writing the checkpoint and its history CSV."""
    with handle_errors():
        spec = _build_spec(
            Command.TRAIN,
            {"manifest": manifest, "out": out},
            config,
            feature_kind=feature_kind,
            depth=depth,
            input_dim=input_dim,
            pooling=pooling,
            learning_rate=lr,
            batch_size=batch_size,
            patience_epochs=patience,
            max_epochs=max_epochs,
            seed=seed,
            standardize=standardize,
        )
        train_cfg = spec.train_config()
        kind = spec.salf_config().feature_kind
        loaded = load_manifest(manifest, feature_kind=kind)
        feature_set = _resolve(loaded, kind)

        extra = {} if "input_dim" in spec.overrides else {"input_dim": feature_set.dims}
        salf_cfg = spec.salf_config(**extra)

        result = train(loaded, salf_cfg, train_cfg, features=feature_set)
        save_checkpoint(result.model, out)
        history_path = out.with_suffix(".history.csv")
        result.history.write_csv(history_path)

        best = result.history.best
        table = Table(title=f"Best epoch {best.epoch} (validation)", show_header=True)
        for name in ("Train L1", "MSE", "LCC", "SRCC", "KTAU"):
            table.add_column(name, style="cyan", justify="right")
        table.add_row(
            _fmt(best.train_l1),
            _fmt(best.val_mse),
            _fmt(best.val_lcc),
            _fmt(best.val_srcc),
            _fmt(best.val_ktau),
        )
        console.print(table)

        test_set = result.split_set("test")
        report = evaluate(result.model, test_set)
        report.write_csv(out.with_suffix(".test.csv"))
        console.print(metrics_table("Test split", report))

        _record_run(
            "train",
            {
                "manifest": str(manifest),
                "checkpoint": str(out),
                "model": salf_cfg.summary(),
                "training": train_cfg.model_dump(),
                "standardized": train_cfg.standardize,
                "split": list(result.split.sizes),
                "best_epoch": best.epoch,
                "epochs_run": len(result.history),
                "parameters": result.model.num_parameters(),
                "test": report.metrics(),
            },
        )
        console.print(f"[green]Checkpoint {out}, history {history_path}[/green]")


@app.command(name="evaluate")
def evaluate_command(
    checkpoint: Path = typer.Option(..., "--checkpoint", help="SALF-C1 checkpoint"),
    manifest: Path = ManifestOpt,
    split: SplitName = typer.Option(
        SplitName.TEST, "--split", help="Which 8:1:1 partition to score"
    ),
    seed: int = typer.Option(0, "--seed", help="Seed the split was drawn with"),
    out: Optional[Path] = typer.Option(None, "--out", help="Evaluation CSV"),
):
    """Score a split of a manifest with a trained checkpoint."""
    with handle_errors():
        model = load_checkpoint(checkpoint)
        kind = model.config.feature_kind
        loaded = load_manifest(manifest, feature_kind=kind)
        if split != SplitName.ALL:
            ids = getattr(split_ids(loaded.ids, seed), split.value)
            loaded = loaded.subset(ids)

        report = evaluate(model, _resolve(loaded, kind))
        target = out or checkpoint.with_suffix(f".{split.value}.csv")
        report.write_csv(target)
        title = f"{split.value} split ({len(report)} utterances)"
        console.print(metrics_table(title, report))
        console.print(f"[green]Per-utterance scores written to {target}[/green]")


@app.command()
def predict(
    inputs: List[Path] = typer.Argument(..., help="WAV or SALF-F1 files"),
    checkpoint: Path = typer.Option(..., "--checkpoint", help="SALF-C1 checkpoint"),
    out: Optional[Path] = typer.Option(None, "--out", help="Predictions CSV"),
):
    """Predict MOS for individual WAV or feature files."""
    with handle_errors():
        model = load_checkpoint(checkpoint)
        cepstral = CepstralConfig()
        rows = []
        for path in inputs:
            try:
                data = path.read_bytes()
            except OSError as e:
                raise SalfError(f"Cannot read {path}: {e}") from e
            content_type = (
                "application/octet-stream"
                if data[:4] == FEATURE_MAGIC
                else "audio/wav"
            )
            rows.append((str(path), score_upload(model, cepstral, data, content_type)))

        table = Table(title="Predicted MOS", show_header=True)
        table.add_column("File", style="cyan")
        table.add_column("MOS", style="green", justify="right")
        for name, mos in rows:
            table.add_row(name, f"{mos:.3f}")
        console.print(table)
        if out is not None:
            write_table_csv(out, ("file", "mos"), rows)


def _parse_kind_manifests(items: Optional[List[str]]) -> Dict[FeatureKind, Path]:
    parsed = {}
    for item in items or []:
        kind, sep, path = item.partition("=")
        if not sep:
            raise ValueError(f"--kind-manifest must look like kind=path, got {item!r}")
        parsed[FeatureKind(kind.strip())] = Path(path.strip())
    return parsed


def _ablation_run(
    manifest: Manifest,
    feature_set: FeatureSet,
    split: DataSplit,
    salf_cfg: SalfConfig,
    train_cfg: TrainConfig,
) -> EvalReport:
    result = train(manifest, salf_cfg, train_cfg, features=feature_set, split=split)
    return evaluate(result.model, result.split_set("test"))


@app.command()
def ablate(
    manifest: Path = ManifestOpt,
    axis: Axis = typer.Option(..., "--axis", help="depth or feature"),
    values: str = typer.Option(..., "--values", help="Comma-separated values"),
    out: Path = typer.Option(Path("ablation.csv"), "--out", help="Results CSV"),
    kind_manifest: Optional[List[str]] = typer.Option(
        None, "--kind-manifest", help="Per-kind manifest, e.g. wav2vec=w2v.csv"
    ),
    config: Optional[Path] = ConfigOpt,
    feature_kind: Optional[FeatureKind] = KindOpt,
    depth: Optional[int] = DepthOpt,
    pooling: Optional[Pooling] = PoolingOpt,
    lr: Optional[float] = LrOpt,
    batch_size: Optional[int] = BatchOpt,
    patience: Optional[int] = PatienceOpt,
    max_epochs: Optional[int] = EpochsOpt,
    seed: Optional[int] = SeedOpt,
    standardize: Optional[bool] = StandardizeOpt,
):
    """Train and evaluate once per depth or feature kind on one shared split."""
    with handle_errors():
        spec = _build_spec(
            Command.ABLATE,
            {"manifest": manifest, "out": out},
            config,
            feature_kind=feature_kind,
            depth=depth,
            pooling=pooling,
            learning_rate=lr,
            batch_size=batch_size,
            patience_epochs=patience,
            max_epochs=max_epochs,
            seed=seed,
            standardize=standardize,
        )
        train_cfg = spec.train_config()
        items = [v.strip() for v in values.split(",") if v.strip()]
        if not items:
            raise ValueError("--values must name at least one value")

        base = load_manifest(manifest)
        split = split_ids(base.ids, train_cfg.seed)
        rows = []

        if axis == Axis.DEPTH:
            depths = [int(v) for v in items]
            kind = spec.salf_config().feature_kind
            feature_set = _resolve(base, kind)
            for d in depths:
                salf_cfg = spec.salf_config(depth=d, input_dim=feature_set.dims)
                report = _ablation_run(base, feature_set, split, salf_cfg, train_cfg)
                rows.append((d, *report.metrics().values()))
                logger.info(f"depth={d}: test mse={report.mse:.4f}")
        else:
            kinds = [FeatureKind(v) for v in items]
            per_kind = _parse_kind_manifests(kind_manifest)
            for kind in kinds:
                kind_manifest_ = (
                    load_manifest(per_kind[kind]).subset(base.ids)
                    if kind in per_kind
                    else base
                )
                feature_set = _resolve(kind_manifest_, kind)
                salf_cfg = spec.salf_config(
                    feature_kind=kind, input_dim=feature_set.dims
                )
                report = _ablation_run(
                    kind_manifest_, feature_set, split, salf_cfg, train_cfg
                )
                rows.append((kind.value, *report.metrics().values()))
                logger.info(f"feature={kind.value}: test mse={report.mse:.4f}")

        columns = (axis.value,) + METRIC_NAMES
        write_table_csv(out, columns, rows)

        table = Table(title=f"{axis.value} ablation (test split)", show_header=True)
        for column in columns:
            table.add_column(column, style="cyan", justify="right")
        for row in rows:
            table.add_row(str(row[0]), *(_fmt(v) for v in row[1:]))
        console.print(table)

        _record_run(
            "ablate",
            {
                "manifest": str(manifest),
                "axis": axis.value,
                "values": items,
                "training": train_cfg.model_dump(),
                "standardized": train_cfg.standardize,
                "split": list(split.sizes),
                "results": {str(r[0]): dict(zip(METRIC_NAMES, r[1:])) for r in rows},
            },
        )
        console.print(f"[green]Results written to {out}[/green]")


@app.command()
def serve(
    checkpoint: Path = typer.Option(..., "--checkpoint", help="SALF-C1 checkpoint"),
    bind: str = typer.Option("127.0.0.1:8080", "--bind", help="host:port"),
):
    """Serve /health and /predict for one checkpoint."""
    with handle_errors():
        model = load_checkpoint(checkpoint)
        run_service(model, bind, CepstralConfig())


@app.command()
def runs(
    key: Optional[str] = typer.Argument(None, help="Run record to show"),
    delete: bool = typer.Option(False, "--delete", help="Delete the named record"),
):
    """List stored run records, or show / delete one of them."""
    with handle_errors():
        store = open_store(settings.runs_dir)
        if key is None:
            if delete:
                raise ValueError("--delete needs a run key")
            table = Table(title=f"Runs in {settings.runs_dir}", show_header=True)
            table.add_column("Key", style="cyan")
            table.add_column("Manifest", style="white")
            table.add_column("Test MSE", style="green", justify="right")
            for name in sorted(store.list_keys()):
                record = store.load(name) or {}
                test_mse = (record.get("test") or {}).get("mse")
                table.add_row(name, str(record.get("manifest", "")), _fmt(test_mse))
            console.print(table)
            return

        if not store.exists(key):
            raise KeyError(f"No run record named {key!r}")
        if delete:
            store.delete(key)
            console.print(f"[green]Deleted run record {key}[/green]")
        else:
            record = yaml.safe_dump(store.load(key), sort_keys=False)
            console.print(record, markup=False)


@app.command(name="extractors")
def list_extractors():
    """List the registered feature extractors."""
    table = Table(title="Feature Extractors", show_header=True)
    table.add_column("Kind", style="cyan")
    table.add_column("Code", style="green")
    table.add_column("Input", style="blue")
    table.add_column("Description", style="white")
    for meta in extractor_loader().list_extractors():
        table.add_row(
            meta["name"],
            str(meta["code"]),
            "audio" if meta["needs_audio"] else "SALF-F1 file",
            meta["description"],
        )
    console.print(table)


def _version_callback(value: bool):
    if value:
        console.print(f"[bold cyan]SALF-MOS[/bold cyan] v{__version__}")
        raise typer.Exit(0)


@app.callback()
def main(
    version: bool = typer.Option(
        False,
        "--version",
        "-v",
        help="Show version",
        callback=_version_callback,
        is_eager=True,
    ),
    debug: bool = typer.Option(False, "--debug", "-d", help="Enable debug logging"),
):
    """SALF-MOS - small speech quality (MOS) prediction toolkit."""
    global settings
    settings = Settings()
    configure_logging("DEBUG" if debug else settings.log)


if __name__ == "__main__":
    app()
