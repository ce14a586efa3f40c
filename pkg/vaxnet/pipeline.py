"""Staged, file-based pipeline behind the command line.

Every stage reads the artifacts of earlier stages from the output directory
and writes its own there. Country x period units of a stage are independent
and run in a process pool when more than one worker is configured.
"""
import copy
import hashlib
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Set, Tuple

import pandas as pd

from . import annotate, cluster, cohorts, flows, geolocate, graph, ingest, lowcred, polarization
from .config import ConfigError, PipelineConfig
from .heatmap import render_heatmap


logger = logging.getLogger(__name__)

STAGES = (
    "ingest",
    "geolocate",
    "build-graphs",
    "cluster",
    "sample",
    "classify",
    "metrics",
    "flows",
    "cohorts",
    "report",
)
TERMINAL_STATUSES = frozenset({"complete", "error"})
GRAPH_KINDS = ("rt", "co")
FIGURE_KINDS = (
    flows.FlowKind.NORMALIZED,
    flows.FlowKind.DENSITY_RATIO,
    flows.FlowKind.LOWCRED_RATE,
    flows.FlowKind.LOWCRED_SHARE,
)
ANNOTATION = "annotation"


class MissingArtifactError(FileNotFoundError):
    """Raised when a stage runs before the stage producing its input."""

    def __init__(self, stage: str, producer: str, path: Path):
        self.stage = stage
        self.producer = producer
        self.path = Path(path)
        super().__init__(f"[{stage}] missing artifact from stage {producer}: {path}")

    def __str__(self) -> str:
        return self.args[0]


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def unit_seed(seed: int, *parts: str) -> int:
    """Stable per-unit seed derived from the root seed."""
    digest = hashlib.sha256(":".join([str(seed), *parts]).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")


class Layout:
    """Artifact paths under the output directory."""

    def __init__(self, root: Path):
        self.root = Path(root)

    def ingest(self, period: str) -> Path:
        return self.root / "ingest" / f"{period}.jsonl"

    def geolocate(self, name: str) -> Path:
        return self.root / "geolocate" / f"{name}.tsv"

    def graph(self, country: str, period: str, kind: str) -> Path:
        return self.root / "graphs" / country / period / f"{kind}.tsv"

    def summary(self, country: str, period: str) -> Path:
        return self.root / "graphs" / country / period / "summary.tsv"

    def dendrogram(self, country: str, period: str, kind: str) -> Path:
        return self.root / "clusters" / country / period / f"{kind}.dendrogram.tsv"

    def partition(self, country: str, period: str, kind: str) -> Path:
        return self.root / "clusters" / country / period / f"{kind}.partition.tsv"

    def samples(self, country: str, period: str, round: int) -> Path:
        return self.root / "samples" / country / period / f"round{round}.tsv"

    def stances(self, country: str, period: str) -> Path:
        return self.root / "classify" / country / period / "stances.tsv"

    def agreement(self, country: str, period: str) -> Path:
        return self.root / "classify" / country / period / "agreement.tsv"

    def metrics(self, country: str, period: str) -> Path:
        return self.root / "metrics" / country / period / "metrics.tsv"

    def flow(self, period: str, kind: flows.FlowKind) -> Path:
        return self.root / "flows" / period / f"{kind.value}.csv"

    def exports(self, period: str) -> Path:
        return self.root / "flows" / period / "exports.tsv"

    def cohort(self, country: str, period: str, name: str) -> Path:
        return self.root / "cohorts" / country / period / f"{name}.tsv"

    def report(self, name: str) -> Path:
        return self.root / "report" / name


def write_text(path: Path, render: Callable[[io.TextIOBase], None]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        render(handle)


def write_table(path: Path, frame: pd.DataFrame, stamp: str) -> None:
    """Tab- or comma-separated table after a ``# config_digest=`` line."""

    def render(handle):
        handle.write(f"# {stamp}\n")
        frame.to_csv(
            handle,
            sep="\t" if path.suffix == ".tsv" else ",",
            index=False,
            na_rep="NA",
            float_format="%.10g",
            lineterminator="\n",
        )

    write_text(path, render)


def read_table(path: Path) -> pd.DataFrame:
    with path.open(encoding="utf-8") as handle:
        body = "".join(line for line in handle if not line.startswith("#"))
    if not body.strip():
        return pd.DataFrame()
    return pd.read_csv(
        io.StringIO(body),
        sep="\t" if path.suffix == ".tsv" else ",",
        na_values=["NA"],
        keep_default_na=False,
        dtype={"country": str, "period": str, "user_id": str, "lang": str, "stance": str},
    )


def _read_lines(path: Path) -> List[str]:
    with path.open(encoding="utf-8") as handle:
        return handle.readlines()


def load_user_geo(layout: Layout) -> geolocate.UserGeo:
    frame = read_table(layout.geolocate("users"))
    if frame.empty:
        return geolocate.UserGeo()
    return geolocate.UserGeo(countries=dict(zip(frame["user_id"], frame["country"])))


def load_countries(layout: Layout) -> Dict[str, str]:
    frame = read_table(layout.geolocate("countries"))
    if frame.empty:
        return {}
    return dict(zip(frame["country"], frame["lang"]))


def load_stance_map(path: Path) -> annotate.StanceMap:
    frame = read_table(path)
    if frame.empty:
        return annotate.StanceMap()
    return annotate.StanceMap(
        stances={
            int(community): annotate.Stance(stance)
            for community, stance in zip(frame["community_id"], frame["stance"])
        },
        novax_counts={
            int(community): int(count)
            for community, count in zip(frame["community_id"], frame["novax_labels"])
        },
    )


def _period_events(layout: Layout, period: str) -> List[ingest.TweetEvent]:
    return list(ingest.read_events(layout.ingest(period)))


def _read_partition(path: Path) -> cluster.Partition:
    return cluster.read_partition(_read_lines(path))


def _read_graph(path: Path) -> graph.WeightedGraph:
    return graph.read_edgelist(_read_lines(path))


def _texts(events: Iterable[ingest.TweetEvent]) -> Dict[str, str]:
    texts: Dict[str, str] = {}
    for event in events:
        texts[event.tweet_id] = event.text
        if event.is_retweet:
            texts.setdefault(event.retweeted_tweet_id, event.text)
    return texts


def _unit_records(
    records: Sequence[annotate.LabelRecord],
    samples: Dict[int, Set[Tuple[int, str]]],
) -> List[annotate.LabelRecord]:
    """Label records whose (community, tweet) pair was sampled in this unit for that round."""
    return [
        record
        for record in records
        if (record.community_id, record.tweet_id) in samples.get(record.round, set())
    ]


def _unit_samples(layout: Layout, country: str, period: str) -> Dict[int, Set[Tuple[int, str]]]:
    sampled = {}
    for round in (1, 2):
        path = layout.samples(country, period, round)
        if path.exists():
            sampled[round] = set(annotate.read_samples(_read_lines(path)))
    return sampled


def build_graphs_unit(config: PipelineConfig, country: str, period: str, lang: str) -> Dict[str, Any]:
    layout = Layout(config.out)
    stamp = config.stamp()
    events = _period_events(layout, period)
    user_geo = load_user_geo(layout)
    built = {
        "rt": graph.build_rt_graph(events, country, lang, user_geo),
        "co": graph.build_co_graph(events, country, lang, user_geo),
    }
    rows = []
    reduced = {}
    for kind in GRAPH_KINDS:
        pruned = graph.prune(built[kind], config.min_weight_rt, config.min_weight_co)
        reduced[kind] = graph.giant_component(pruned)
        summary = graph.describe(pruned, reduced[kind])
        write_text(
            layout.graph(country, period, kind),
            lambda handle, g=reduced[kind]: graph.write_edgelist(g, handle, comment=stamp),
        )
        rows.append(
            {
                "country": country,
                "period": period,
                "kind": kind,
                "nodes": summary.nodes,
                "edges": summary.edges,
                "total_weight": summary.total_weight,
                "gcc_nodes": summary.gcc_nodes,
                "gcc_share": summary.gcc_share,
            }
        )
    try:
        overlap = graph.overlap_coefficient(reduced["rt"].nodes, reduced["co"].nodes)
    except graph.GraphError:
        overlap = None
    for row in rows:
        row["rt_co_overlap"] = overlap
    write_table(layout.summary(country, period), pd.DataFrame(rows), stamp)
    return {"country": country, "period": period, "rt_nodes": rows[0]["gcc_nodes"]}


def cluster_unit(config: PipelineConfig, country: str, period: str) -> Dict[str, Any]:
    layout = Layout(config.out)
    stamp = config.stamp()
    sizes = {}
    for kind in GRAPH_KINDS:
        network = _read_graph(layout.graph(country, period, kind))
        if network.is_empty():
            logger.warning(
                "Nothing to cluster",
                extra={"event": "cluster_skipped", "country": country, "period": period, "kind": kind},
            )
            dendrogram, partition = cluster.Dendrogram(leaves=()), cluster.Partition({})
        else:
            dendrogram = cluster.paris_dendrogram(network)
            partition = cluster.select_partition(network, dendrogram, dominance=config.dominance)
        write_text(
            layout.dendrogram(country, period, kind),
            lambda handle, d=dendrogram: cluster.write_dendrogram(d, handle, comment=stamp),
        )
        write_text(
            layout.partition(country, period, kind),
            lambda handle, p=partition: cluster.write_partition(p, handle, comment=stamp),
        )
        sizes[kind] = partition.k
    return {"country": country, "period": period, **sizes}


def sample_unit(
    config: PipelineConfig,
    country: str,
    period: str,
    round: int,
    records: Sequence[annotate.LabelRecord] = (),
) -> Dict[str, Any]:
    layout = Layout(config.out)
    events = _period_events(layout, period)
    partition = _read_partition(layout.partition(country, period, "rt"))
    if round == 1:
        samples = annotate.sample_round1(
            partition,
            events,
            n=config.sample_size,
            min_frac=config.min_frac,
            seed=unit_seed(config.seed, "sample", country, period),
        )
    else:
        unit_records = _unit_records(records, _unit_samples(layout, country, period))
        samples = annotate.sample_round2(
            partition,
            events,
            annotate.label_counts(unit_records, round=1),
            top=config.round2_top,
            exclude_top=config.round2_exclude_top,
        )
    texts = _texts(events)
    write_text(
        layout.samples(country, period, round),
        lambda handle: annotate.write_samples(samples, texts, handle, comment=config.stamp()),
    )
    return {"country": country, "period": period, "samples": len(samples)}


def classify_unit(
    config: PipelineConfig,
    country: str,
    period: str,
    records: Sequence[annotate.LabelRecord],
) -> Dict[str, Any]:
    layout = Layout(config.out)
    stamp = config.stamp()
    unit_records = _unit_records(records, _unit_samples(layout, country, period))
    stance_map = annotate.classify_communities(unit_records, threshold=config.stance_threshold)
    partition = _read_partition(layout.partition(country, period, "rt"))
    rows = [
        {
            "community_id": community,
            "stance": stance_map.stance(community).value,
            "novax_labels": stance_map.novax_counts.get(community, 0),
            "users": len(members),
        }
        for community, members in partition.communities().items()
    ]
    frame = pd.DataFrame(rows, columns=["community_id", "stance", "novax_labels", "users"])
    write_table(layout.stances(country, period), frame, stamp)

    agreement = []
    for mode, classes in (("3-class", annotate.THREE_CLASS), ("2-class", annotate.TWO_CLASS)):
        report = annotate.annotator_agreement(unit_records, classes=classes)
        agreement.append(
            {
                "country": country,
                "period": period,
                "mode": mode,
                "kappa": report.kappa,
                "disagreement": report.disagreement,
                "items": report.items,
            }
        )
    write_table(layout.agreement(country, period), pd.DataFrame(agreement), stamp)
    return {"country": country, "period": period, "novax": len(stance_map.novax_communities())}


def metrics_unit(
    config: PipelineConfig,
    country: str,
    period: str,
    records: Sequence[annotate.LabelRecord] = (),
) -> Dict[str, Any]:
    layout = Layout(config.out)
    rt_partition = _read_partition(layout.partition(country, period, "rt"))
    co_partition = _read_partition(layout.partition(country, period, "co"))
    rows: List[Dict[str, Any]] = []

    def emit(metric: str, value, stderr=None):
        rows.append(
            {"country": country, "period": period, "metric": metric, "value": value, "stderr": stderr}
        )

    try:
        emit("nmi", polarization.nmi(rt_partition, co_partition))
    except polarization.NmiError:
        emit("nmi", None)

    stances_path = layout.stances(country, period)
    if not stances_path.exists():
        logger.warning(
            "No stance labels; controversy score skipped",
            extra={"event": "rwc_skipped", "country": country, "period": period, "reason": "no stances"},
        )
        for metric in ("novax_user_share", "novax_tweet_share", "rwc"):
            emit(metric, None)
    else:
        stance_map = load_stance_map(stances_path)
        network = _read_graph(layout.graph(country, period, "rt"))
        sides = polarization.stance_bipartition(network, rt_partition, stance_map)
        n = network.number_of_nodes()
        emit("novax_user_share", len(sides.side_x) / n if n else None)
        unit_records = _unit_records(records, _unit_samples(layout, country, period))
        emit("novax_tweet_share", annotate.novax_label_share(unit_records, round=1))
        if not sides.side_x or not sides.side_y:
            logger.warning(
                "Controversy needs two nonempty sides; skipped",
                extra={"event": "rwc_skipped", "country": country, "period": period, "reason": "one side"},
            )
            emit("rwc", None)
        else:
            try:
                if config.rwc_method.value == polarization.RwcMethod.MONTECARLO.value:
                    result = polarization.rwc_montecarlo(
                        network,
                        sides,
                        k_absorb=config.k_absorb,
                        n_walks=config.n_walks,
                        seed=unit_seed(config.seed, "rwc", country, period),
                        reverse=config.walk_reverse,
                    )
                else:
                    result = polarization.rwc_exact(
                        network, sides, k_absorb=config.k_absorb, reverse=config.walk_reverse
                    )
                emit("rwc", result.rwc, result.stderr)
            except polarization.RwcError as exc:
                logger.warning(
                    "Controversy score undefined",
                    extra={"event": "rwc_skipped", "country": country, "period": period, "reason": str(exc)},
                )
                emit("rwc", None)

    frame = pd.DataFrame(rows, columns=["country", "period", "metric", "value", "stderr"])
    write_table(layout.metrics(country, period), frame, config.stamp())
    return {"country": country, "period": period}


def _stances_by_country(layout: Layout, countries: Iterable[str], period: str) -> Dict[str, Dict[str, annotate.Stance]]:
    stances = {}
    for country in countries:
        path = layout.stances(country, period)
        partition_path = layout.partition(country, period, "rt")
        if not path.exists() or not partition_path.exists():
            continue
        stance_map = load_stance_map(path)
        partition = _read_partition(partition_path)
        stances[country] = {
            user: stance_map.stance(community) for user, community in partition.assignment.items()
        }
    return stances


def flows_unit(config: PipelineConfig, period: str, countries: Sequence[str]) -> Dict[str, Any]:
    layout = Layout(config.out)
    stamp = config.stamp()
    events = _period_events(layout, period)
    user_geo = load_user_geo(layout)
    raw = flows.raw_rt_matrix(events, user_geo, countries)
    matrices = [raw, flows.normalize_flow(raw)]

    stances = _stances_by_country(layout, countries, period)
    if stances:
        matrices.append(flows.density_ratio(events, stances, user_geo, countries))
    else:
        logger.warning(
            "No stance labels; density ratios skipped",
            extra={"event": "density_ratio_skipped", "period": period},
        )

    domain_list = lowcred.load_domain_list(config.domain_lists) if config.domain_lists else None
    shorteners = lowcred.load_shorteners(config.shorteners) if config.shorteners else None
    if domain_list is not None:
        matrices.extend(
            flows.lowcred_import_matrix(
                events, user_geo, countries, domain_list, config.min_imports, shorteners
            )
        )
    for matrix in matrices:
        write_text(
            layout.flow(period, matrix.kind),
            lambda handle, m=matrix: flows.write_matrix_csv(m, handle, comment=stamp),
        )

    rows = {
        marginal.country: {
            "period": period,
            "country": marginal.country,
            "inflow": marginal.inflow,
            "outflow": marginal.outflow,
            "net_export": marginal.net_export,
        }
        for marginal in flows.flow_marginals(raw)
    }
    if domain_list is not None:
        status = cohorts.load_status(config.status) if config.status else None
        for row in flows.export_summary(events, user_geo, countries, domain_list, status, shorteners):
            rows[row.country].update(
                retweet_share=row.retweet_share,
                lowcred_share=row.lowcred_share,
                suspended_share=row.suspended_share,
            )
    write_table(layout.exports(period), pd.DataFrame(list(rows.values())), stamp)
    return {"period": period, "matrices": len(matrices)}


def cohorts_unit(
    config: PipelineConfig,
    country: str,
    period: str,
    corpus_paths: Sequence[Path],
) -> Dict[str, Any]:
    layout = Layout(config.out)
    stamp = config.stamp()
    partition = _read_partition(layout.partition(country, period, "rt"))
    stances_path = layout.stances(country, period)
    stance_map = load_stance_map(stances_path) if stances_path.exists() else None
    events = _period_events(layout, period)
    domain_list = lowcred.load_domain_list(config.domain_lists) if config.domain_lists else None
    shorteners = lowcred.load_shorteners(config.shorteners) if config.shorteners else None

    behavior = cohorts.cohort_behavior(
        events, partition, stance_map, domain_list, country, period, shorteners
    )
    write_table(
        layout.cohort(country, period, "behavior"),
        pd.DataFrame([asdict(stats) for stats in behavior]),
        stamp,
    )

    if config.status is None:
        logger.warning(
            "No account status snapshot; suspension statistics skipped",
            extra={"event": "suspension_skipped", "country": country, "period": period},
        )
        return {"country": country, "period": period, "cohorts": len(behavior)}

    corpus = [event for path in corpus_paths for event in ingest.read_events(path)]
    report = cohorts.suspension_stats(
        partition, stance_map, cohorts.load_status(config.status), corpus, country, period
    )
    write_table(
        layout.cohort(country, period, "suspension"),
        pd.DataFrame(
            [
                {**asdict(row), "proportion": row.proportion if row.n_users else None}
                for row in report.rows
            ],
            columns=["country", "period", "cohort", "n_users", "suspended", "proportion"],
        ),
        stamp,
    )
    write_table(
        layout.cohort(country, period, "daily"),
        pd.DataFrame(
            [
                {"country": code, "period": period, "date": day.isoformat(), "suspended": count}
                for code, days in report.daily.items()
                for day, count in days.items()
            ],
            columns=["country", "period", "date", "suspended"],
        ),
        stamp,
    )
    return {"country": country, "period": period, "cohorts": len(behavior)}


FIG2_COLUMNS = [
    "country",
    "period",
    "novax_tweet_share",
    "novax_user_share",
    "rwc",
    "rwc_stderr",
    "nmi",
    "communities",
    "largest_community_share",
]


def concat_tables(paths: Iterable[Path]) -> pd.DataFrame:
    frames = [read_table(path) for path in paths if path.exists()]
    frames = [frame for frame in frames if not frame.empty]
    if not frames:
        return pd.DataFrame()
    return pd.concat(frames, ignore_index=True)


def _figure_rows(layout: Layout, units: Sequence[Tuple[str, str]]) -> List[Dict[str, Any]]:
    rows = []
    for country, period in units:
        frame = read_table(layout.metrics(country, period))
        values = dict(zip(frame["metric"], frame["value"])) if not frame.empty else {}
        stderr = dict(zip(frame["metric"], frame["stderr"])) if not frame.empty else {}
        partition = _read_partition(layout.partition(country, period, "rt"))
        rows.append(
            {
                "country": country,
                "period": period,
                "novax_tweet_share": values.get("novax_tweet_share"),
                "novax_user_share": values.get("novax_user_share"),
                "rwc": values.get("rwc"),
                "rwc_stderr": stderr.get("rwc"),
                "nmi": values.get("nmi"),
                "communities": partition.k,
                "largest_community_share": partition.largest_share() if len(partition) else None,
            }
        )
    return rows


@dataclass
class StageState:
    stage: str
    status: str
    message: str
    error: Optional[str]
    started_at: str
    updated_at: str

    def serialize(self) -> Dict[str, Any]:
        return copy.deepcopy(asdict(self))


class StageRunner:
    """Own stage lifecycle state and dispatch country x period units."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.layout = Layout(config.out)
        self.states: Dict[str, StageState] = {}
        self._stage: Optional[str] = None

    def run(self, stage: str, **options) -> Dict[str, Any]:
        if stage not in STAGES:
            raise ValueError(f"unknown stage {stage!r}")
        now = utc_now()
        state = StageState(stage, "pending", f"Waiting to run {stage}", None, now, now)
        self.states[stage] = state
        self._log_transition(state)
        self._stage = stage
        self._transition(state, "running", f"Running {stage}")
        try:
            summary = getattr(self, "_" + stage.replace("-", "_"))(**options)
        except Exception as exc:
            self._transition(state, "error", str(exc), error=str(exc))
            raise
        finally:
            self._stage = None
        self._transition(state, "complete", f"{stage} complete")
        return summary

    def get_state(self, stage: str) -> Dict[str, Any]:
        return self.states[stage].serialize()

    def _transition(self, state: StageState, status: str, message: str, error: Optional[str] = None) -> None:
        state.status = status
        state.message = message
        if error is not None:
            state.error = error
        state.updated_at = utc_now()
        self._log_transition(state)

    @staticmethod
    def _log_transition(state: StageState) -> None:
        logger.info(
            "Pipeline stage transition",
            extra={"event": "stage_transition", "stage": state.stage, "status": state.status},
        )

    def require(self, path: Path, producer: str) -> Path:
        if not path.exists():
            raise MissingArtifactError(self._stage or "?", producer, path)
        return path

    def require_input(self, path: Optional[Path], name: str) -> Path:
        if path is None:
            raise ConfigError(f"{name} is not configured")
        if not Path(path).exists():
            raise ConfigError(f"{name} does not exist: {path}")
        return Path(path)

    def periods(self) -> List[ingest.Period]:
        periods = ingest.load_periods(self.require_input(self.config.periods, "periods"))
        if self.config.period is not None:
            periods = [period for period in periods if period.name == self.config.period]
            if not periods:
                raise ConfigError(f"period {self.config.period!r} is not declared")
        return periods

    def countries(self) -> Dict[str, str]:
        self.require(self.layout.geolocate("countries"), "geolocate")
        countries = load_countries(self.layout)
        if self.config.countries:
            countries = {code: lang for code, lang in countries.items() if code in self.config.countries}
        return dict(sorted(countries.items()))

    def units(self, require: Sequence[Tuple[Callable[[str, str], Path], str]] = ()) -> List[Tuple[str, str]]:
        units = [(country, period.name) for country in self.countries() for period in self.periods()]
        for country, period in units:
            for path_of, producer in require:
                self.require(path_of(country, period), producer)
        return units

    def map_units(self, func: Callable, arguments: Sequence[Tuple]) -> List[Any]:
        if self.config.workers == 1 or len(arguments) <= 1:
            return [func(self.config, *args) for args in arguments]
        with ProcessPoolExecutor(max_workers=self.config.workers) as pool:
            futures = [pool.submit(func, self.config, *args) for args in arguments]
            return [future.result() for future in futures]

    def label_records(self) -> List[annotate.LabelRecord]:
        path = self.config.labels
        if path is None or not Path(path).exists():
            raise MissingArtifactError(self._stage or "?", ANNOTATION, path or Path("labels"))
        return annotate.read_labels(_read_lines(Path(path)))

    def _optional_label_records(self) -> List[annotate.LabelRecord]:
        path = self.config.labels
        if path is None or not Path(path).exists():
            return []
        return annotate.read_labels(_read_lines(Path(path)))

    def _ingest(self) -> Dict[str, Any]:
        config = self.config
        keyword_set = ingest.load_keywords(self.require_input(config.keywords, "keywords"))
        merged: Dict[str, ingest.TweetEvent] = {}
        for path in config.events:
            for event in ingest.read_events(self.require_input(path, "events")):
                merged.setdefault(event.tweet_id, event)
        events = sorted(merged.values(), key=lambda event: (event.timestamp, event.tweet_id))
        kept = ingest.filter_keywords(events, keyword_set, reference_lang=config.reference_lang)
        counts = {}
        for period in ingest.load_periods(self.require_input(config.periods, "periods")):
            selected = ingest.slice_period(kept, period)

            def render(handle, selected=selected):
                handle.write(f"# {config.stamp()}\n")
                ingest.write_events(selected, handle)

            write_text(self.layout.ingest(period.name), render)
            counts[period.name] = len(selected)
        logger.info(
            "Events ingested",
            extra={"event": "ingest_done", "events": len(events), "kept": len(kept), "periods": counts},
        )
        return {"events": len(events), "kept": len(kept), "periods": counts}

    def _all_periods(self) -> List[ingest.Period]:
        return ingest.load_periods(self.require_input(self.config.periods, "periods"))

    def _geolocate(self) -> Dict[str, Any]:
        config = self.config
        events_by_period = {
            period.name: list(ingest.read_events(self.require(self.layout.ingest(period.name), "ingest")))
            for period in self._all_periods()
        }
        gazetteer = geolocate.load_gazetteer(
            self.require_input(config.gazetteer, "gazetteer"),
            self.require_input(config.stoplist, "stoplist") if config.stoplist else None,
        )
        user_geo = geolocate.assign_countries(events_by_period, gazetteer, config.min_pair_retweets)
        if config.exclusions is not None:
            user_geo = geolocate.apply_exclusions(
                user_geo, geolocate.read_lines(self.require_input(config.exclusions, "exclusions"))
            )
        eligible = geolocate.eligible_countries(user_geo, events_by_period, config.min_users)
        if config.countries:
            eligible &= set(config.countries)
        spoken = ingest.load_spoken_languages(
            self.require_input(config.spoken_languages, "spoken_languages")
        )
        everything = [event for events in events_by_period.values() for event in events]
        languages = {}
        for country in sorted(eligible):
            try:
                languages[country] = ingest.dominant_language(
                    everything, country, user_geo, spoken.get(country, ())
                )
            except ingest.LanguageError as exc:
                logger.warning(
                    "Country dropped: no dominant language",
                    extra={"event": "country_dropped", "country": country, "reason": str(exc)},
                )

        stamp = config.stamp()
        write_table(
            self.layout.geolocate("users"),
            pd.DataFrame(sorted(user_geo.countries.items()), columns=["user_id", "country"]),
            stamp,
        )
        write_table(
            self.layout.geolocate("excluded"),
            pd.DataFrame(list(user_geo.excluded), columns=["user_id", "reason"]),
            stamp,
        )
        write_table(
            self.layout.geolocate("flagged"),
            pd.DataFrame(
                list(user_geo.flagged),
                columns=["user_id", "country_i", "country_j", "share", "period"],
            ),
            stamp,
        )
        write_table(
            self.layout.geolocate("countries"),
            pd.DataFrame(sorted(languages.items()), columns=["country", "lang"]),
            stamp,
        )
        return {"users": len(user_geo), "countries": sorted(languages)}

    def _build_graphs(self) -> Dict[str, Any]:
        countries = self.countries()
        units = self.units()
        for _, period in units:
            self.require(self.layout.ingest(period), "ingest")
        results = self.map_units(
            build_graphs_unit, [(country, period, countries[country]) for country, period in units]
        )
        return {"units": results}

    def _cluster(self) -> Dict[str, Any]:
        units = self.units(
            [(lambda c, p, k=kind: self.layout.graph(c, p, k), "build-graphs") for kind in GRAPH_KINDS]
        )
        return {"units": self.map_units(cluster_unit, units)}

    def _sample(self, round: int = 1) -> Dict[str, Any]:
        if round not in (1, 2):
            raise ConfigError("sample round must be 1 or 2")
        units = self.units([(lambda c, p: self.layout.partition(c, p, "rt"), "cluster")])
        for _, period in units:
            self.require(self.layout.ingest(period), "ingest")
        if round == 1:
            return {"units": self.map_units(sample_unit, [(c, p, 1) for c, p in units])}
        for country, period in units:
            self.require(self.layout.samples(country, period, 1), "sample")
        records = self.label_records()
        return {"units": self.map_units(sample_unit, [(c, p, 2, records) for c, p in units])}

    def _classify(self) -> Dict[str, Any]:
        units = self.units(
            [
                (lambda c, p: self.layout.partition(c, p, "rt"), "cluster"),
                (lambda c, p: self.layout.samples(c, p, 1), "sample"),
            ]
        )
        records = self.label_records()
        return {"units": self.map_units(classify_unit, [(c, p, records) for c, p in units])}

    def _metrics(self) -> Dict[str, Any]:
        units = self.units(
            [(lambda c, p, k=kind: self.layout.partition(c, p, k), "cluster") for kind in GRAPH_KINDS]
        )
        records = self._optional_label_records()
        return {"units": self.map_units(metrics_unit, [(c, p, records) for c, p in units])}

    def _flows(self) -> Dict[str, Any]:
        countries = sorted(self.countries())
        self.require(self.layout.geolocate("users"), "geolocate")
        periods = self.periods()
        for period in periods:
            self.require(self.layout.ingest(period.name), "ingest")
        return {"periods": self.map_units(flows_unit, [(period.name, countries) for period in periods])}

    def _cohorts(self) -> Dict[str, Any]:
        units = self.units([(lambda c, p: self.layout.partition(c, p, "rt"), "cluster")])
        corpus = [self.require(self.layout.ingest(period.name), "ingest") for period in self._all_periods()]
        return {"units": self.map_units(cohorts_unit, [(c, p, corpus) for c, p in units])}

    def _report(self) -> Dict[str, Any]:
        config, layout = self.config, self.layout
        stamp = config.stamp()
        countries = self.countries()
        periods = self.periods()
        units = self.units(
            [
                (lambda c, p: layout.summary(c, p), "build-graphs"),
                (lambda c, p: layout.partition(c, p, "rt"), "cluster"),
                (lambda c, p: layout.metrics(c, p), "metrics"),
                (lambda c, p: layout.cohort(c, p, "behavior"), "cohorts"),
            ]
        )
        for period in periods:
            self.require(layout.exports(period.name), "flows")
        written: List[str] = []

        def emit(name: str, frame: pd.DataFrame) -> None:
            write_table(layout.report(name), frame, stamp)
            written.append(name)

        emit("fig2.csv", pd.DataFrame(_figure_rows(layout, units), columns=FIG2_COLUMNS))

        behavior = concat_tables(layout.cohort(c, p, "behavior") for c, p in units)
        if not behavior.empty:
            behavior["lowcred_coverage"] = [
                lowcred.language_coverage(countries[country], config.covered_languages)
                for country in behavior["country"]
            ]
        emit("fig3.csv", behavior)
        emit("fig4a.csv", concat_tables(layout.cohort(c, p, "suspension") for c, p in units))
        emit("fig4b.csv", concat_tables(layout.cohort(c, p, "daily") for c, p in units))

        for period in periods:
            for kind in FIGURE_KINDS:
                source = layout.flow(period.name, kind)
                if not source.exists():
                    continue
                matrix = flows.read_matrix_csv(_read_lines(source), kind)
                name = f"fig5_{period.name}_{kind.value}"
                write_text(
                    layout.report(f"{name}.csv"),
                    lambda handle, m=matrix: flows.write_matrix_csv(m, handle, comment=stamp),
                )
                written.append(f"{name}.csv")
                if config.heatmaps:
                    svg = render_heatmap(matrix, title=f"{kind.value}, {period.name}")
                    svg = svg.replace("?>\n", f"?>\n<!-- {stamp} -->\n", 1)
                    write_text(layout.report(f"{name}.svg"), lambda handle, s=svg: handle.write(s))
                    written.append(f"{name}.svg")

        emit("exports.csv", concat_tables(layout.exports(period.name) for period in periods))

        networks = concat_tables(layout.summary(c, p) for c, p in units)
        if not networks.empty:
            networks["communities"] = [
                _read_partition(layout.partition(country, period, kind)).k
                if layout.partition(country, period, kind).exists()
                else None
                for country, period, kind in zip(networks["country"], networks["period"], networks["kind"])
            ]
        emit("networks.csv", networks)
        emit("agreement.csv", concat_tables(layout.agreement(c, p) for c, p in units))

        user_geo = load_user_geo(layout)
        daily, languages = [], []
        for period in periods:
            events = _period_events(layout, period.name)
            for day, count in ingest.daily_volume(events).items():
                daily.append({"period": period.name, "date": day.isoformat(), "events": count})
            for (country, lang), count in ingest.language_volume(events, user_geo).items():
                if country not in countries:
                    continue
                languages.append(
                    {
                        "period": period.name,
                        "country": country,
                        "lang": lang,
                        "events": count,
                        "lowcred_coverage": lowcred.language_coverage(lang, config.covered_languages),
                    }
                )
        emit("volume_daily.csv", pd.DataFrame(daily, columns=["period", "date", "events"]))
        emit(
            "volume_language.csv",
            pd.DataFrame(languages, columns=["period", "country", "lang", "events", "lowcred_coverage"]),
        )
        logger.info("Report written", extra={"event": "report_written", "files": len(written)})
        return {"files": written}
