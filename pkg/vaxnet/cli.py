"""CLI interface for the vaxnet pipeline."""
import logging
from pathlib import Path
from typing import Dict, List, Optional

import typer

from .annotate import LabelRecord, read_labels, read_samples, write_labels
from .config import ConfigError, PipelineConfig, load_config
from .pipeline import Layout, MissingArtifactError, StageRunner, unit_seed
from .synth import CorpusSpec, load_corpus_spec, read_tweet_labels, simulate_labels, synth_corpus, write_corpus

logger = logging.getLogger(__name__)

app = typer.Typer(help="Per-country vaccine-debate network pipeline")

CONFIG = typer.Option(..., "--config", "-c", help="Pipeline config (key=value file)")
OUT = typer.Option(None, "--out", "-o", help="Output directory")
WORKERS = typer.Option(None, "--workers", "-w", help="Worker processes for country x period units")
SEED = typer.Option(None, "--seed", help="Root random seed")
COUNTRY = typer.Option(None, "--country", help="Restrict to one country code")
PERIOD = typer.Option(None, "--period", help="Restrict to one period name")
DEBUG = typer.Option(False, "--debug", help="Enable debug logs")


def configure_logging(debug: bool) -> None:
    if debug:
        logging.basicConfig(
            level=logging.DEBUG,
            format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        )


def _load(
    config_path: Path,
    out: Optional[Path] = None,
    workers: Optional[int] = None,
    seed: Optional[int] = None,
    country: Optional[str] = None,
    period: Optional[str] = None,
) -> PipelineConfig:
    config = load_config(config_path)
    return config.override(
        out=out,
        workers=workers,
        seed=seed,
        countries=[country] if country else None,
        period=period,
    )


def run_stage(stage: str, config_path: Path, debug: bool = False, **flags) -> None:
    """Run one stage; exit 1 on configuration or stage failure, 2 on a missing artifact."""
    configure_logging(debug)
    options = {key: flags.pop(key) for key in ("round",) if key in flags}
    try:
        config = _load(config_path, **flags)
    except ConfigError as exc:
        print(f"  [{stage}] invalid config: {exc}")
        raise typer.Exit(1)

    runner = StageRunner(config)
    try:
        summary = runner.run(stage, **options)
    except MissingArtifactError as exc:
        print(f"  {exc}")
        raise typer.Exit(2)
    except ConfigError as exc:
        print(f"  [{stage}] invalid config: {exc}")
        raise typer.Exit(1)
    except Exception as exc:
        logger.exception("Stage failed", extra={"event": "stage_failed", "stage": stage})
        print(f"  [{stage}] failed: {exc}")
        raise typer.Exit(1)
    print(f"  [{stage}] complete ({_describe(summary)})")


def _describe(summary: Dict) -> str:
    parts = []
    for key, value in summary.items():
        if isinstance(value, (list, tuple, dict)):
            value = len(value)
        parts.append(f"{key}={value}")
    return ", ".join(parts)


@app.command()
def ingest(
    config: Path = CONFIG,
    out: Optional[Path] = OUT,
    seed: Optional[int] = SEED,
    debug: bool = DEBUG,
):
    """Deduplicate, keyword-filter and slice the event logs into periods."""
    run_stage("ingest", config, debug, out=out, seed=seed)


@app.command()
def geolocate(
    config: Path = CONFIG,
    out: Optional[Path] = OUT,
    country: Optional[str] = COUNTRY,
    debug: bool = DEBUG,
):
    """Assign users to countries and select the countries to analyse."""
    run_stage("geolocate", config, debug, out=out, country=country)


@app.command("build-graphs")
def build_graphs(
    config: Path = CONFIG,
    out: Optional[Path] = OUT,
    workers: Optional[int] = WORKERS,
    country: Optional[str] = COUNTRY,
    period: Optional[str] = PERIOD,
    debug: bool = DEBUG,
):
    """Build pruned retweet and co-sharing giant components per country and period."""
    run_stage("build-graphs", config, debug, out=out, workers=workers, country=country, period=period)


@app.command()
def cluster(
    config: Path = CONFIG,
    out: Optional[Path] = OUT,
    workers: Optional[int] = WORKERS,
    country: Optional[str] = COUNTRY,
    period: Optional[str] = PERIOD,
    debug: bool = DEBUG,
):
    """Hierarchical clustering and partition selection."""
    run_stage("cluster", config, debug, out=out, workers=workers, country=country, period=period)


@app.command()
def sample(
    config: Path = CONFIG,
    round: int = typer.Option(1, "--round", "-r", help="Annotation round: 1 or 2"),
    out: Optional[Path] = OUT,
    workers: Optional[int] = WORKERS,
    seed: Optional[int] = SEED,
    country: Optional[str] = COUNTRY,
    period: Optional[str] = PERIOD,
    debug: bool = DEBUG,
):
    """Draw tweets from each community for annotation."""
    if round not in (1, 2):
        print(f"  Invalid round: {round}. Choose 1 or 2")
        raise typer.Exit(1)
    run_stage(
        "sample", config, debug, round=round, out=out, workers=workers, seed=seed, country=country, period=period
    )


@app.command()
def classify(
    config: Path = CONFIG,
    out: Optional[Path] = OUT,
    workers: Optional[int] = WORKERS,
    country: Optional[str] = COUNTRY,
    period: Optional[str] = PERIOD,
    debug: bool = DEBUG,
):
    """Label communities no-vax or other from annotator labels."""
    run_stage("classify", config, debug, out=out, workers=workers, country=country, period=period)


@app.command()
def metrics(
    config: Path = CONFIG,
    out: Optional[Path] = OUT,
    workers: Optional[int] = WORKERS,
    seed: Optional[int] = SEED,
    country: Optional[str] = COUNTRY,
    period: Optional[str] = PERIOD,
    debug: bool = DEBUG,
):
    """Controversy score, partition agreement and no-vax shares."""
    run_stage("metrics", config, debug, out=out, workers=workers, seed=seed, country=country, period=period)


@app.command()
def flows(
    config: Path = CONFIG,
    out: Optional[Path] = OUT,
    workers: Optional[int] = WORKERS,
    period: Optional[str] = PERIOD,
    debug: bool = DEBUG,
):
    """Cross-border retweet, density-ratio and low-credibility matrices."""
    run_stage("flows", config, debug, out=out, workers=workers, period=period)


@app.command()
def cohorts(
    config: Path = CONFIG,
    out: Optional[Path] = OUT,
    workers: Optional[int] = WORKERS,
    country: Optional[str] = COUNTRY,
    period: Optional[str] = PERIOD,
    debug: bool = DEBUG,
):
    """Behavior and suspension statistics per stance cohort."""
    run_stage("cohorts", config, debug, out=out, workers=workers, country=country, period=period)


@app.command()
def report(
    config: Path = CONFIG,
    out: Optional[Path] = OUT,
    country: Optional[str] = COUNTRY,
    period: Optional[str] = PERIOD,
    debug: bool = DEBUG,
):
    """Assemble figure tables and heatmaps."""
    run_stage("report", config, debug, out=out, country=country, period=period)


@app.command()
def synth(
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Directory for the synthetic corpus"),
    spec: Optional[Path] = typer.Option(None, "--spec", help="Corpus spec (key=value); default demo spec"),
    seed: Optional[int] = SEED,
    label_round: Optional[int] = typer.Option(
        None, "--label-round", help="Simulate annotator labels for this round's samples"
    ),
    config: Optional[Path] = typer.Option(None, "--config", "-c", help="Pipeline config of a synthetic corpus"),
    debug: bool = DEBUG,
):
    """Generate a synthetic corpus, or simulate annotator labels for it."""
    configure_logging(debug)
    if label_round is not None:
        if config is None:
            print("  --label-round needs --config")
            raise typer.Exit(1)
        if label_round not in (1, 2):
            print(f"  Invalid round: {label_round}. Choose 1 or 2")
            raise typer.Exit(1)
        try:
            written = simulate_round(config, label_round)
        except ConfigError as exc:
            print(f"  [synth] invalid config: {exc}")
            raise typer.Exit(1)
        except MissingArtifactError as exc:
            print(f"  {exc}")
            raise typer.Exit(2)
        print(f"  Simulated {written} round-{label_round} labels.")
        return

    if out is None:
        print("  synth needs --out (or --label-round with --config)")
        raise typer.Exit(1)
    try:
        corpus_spec = load_corpus_spec(spec) if spec is not None else CorpusSpec.demo()
        if seed is not None:
            corpus_spec = corpus_spec.model_copy(update={"seed": seed})
    except (ConfigError, ValueError) as exc:
        print(f"  [synth] invalid corpus spec: {exc}")
        raise typer.Exit(1)
    corpus = synth_corpus(corpus_spec)
    config_path = write_corpus(corpus, out)
    print()
    print("  Synthetic corpus written!")
    print(f"  Events:    {len(corpus.events)}")
    print(f"  Countries: {', '.join(sorted(corpus.spec.countries))}")
    print(f"  Config:    {config_path}")
    print()


def simulate_round(config_path: Path, round: int) -> int:
    """Replace the labels of ``round`` with simulated annotations of every sampled tweet."""
    config = load_config(config_path)
    if config.labels is None:
        raise ConfigError("labels is not configured")
    truth_path = Path(config_path).resolve().parent / "truth_tweets.tsv"
    if not truth_path.exists():
        raise ConfigError(f"no tweet ground truth next to the config: {truth_path}")
    with truth_path.open(encoding="utf-8") as handle:
        tweet_labels = read_tweet_labels(handle)

    layout = Layout(config.out)
    unit_files = sorted(layout.root.glob(f"samples/*/*/round{round}.tsv"))
    if not unit_files:
        raise MissingArtifactError("synth", "sample", layout.root / "samples" / "*" / "*" / f"round{round}.tsv")

    kept: List[LabelRecord] = []
    if config.labels.exists():
        with config.labels.open(encoding="utf-8") as handle:
            kept = [record for record in read_labels(handle) if record.round != round]
    simulated: List[LabelRecord] = []
    for path in unit_files:
        country, period = path.parent.parent.name, path.parent.name
        with path.open(encoding="utf-8") as handle:
            samples = read_samples(handle)
        simulated.extend(
            simulate_labels(
                samples,
                tweet_labels,
                round,
                seed=unit_seed(config.seed, "labels", country, period),
            )
        )
    config.labels.parent.mkdir(parents=True, exist_ok=True)
    with config.labels.open("w", encoding="utf-8", newline="\n") as handle:
        write_labels(kept + simulated, handle)
    return len(simulated)


def main():
    app()


if __name__ == "__main__":
    main()
