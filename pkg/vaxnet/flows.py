"""Country-level cross-border flow matrices.

Counts are gathered with the retweeting country on the rows: entry (i, j)
is the number of retweets by users in i of users in j. Information moves
from j to i along such a retweet, which is also the display convention of
exported matrices, so the two orientations coincide. ``FlowMatrix`` still
records which one it holds and converts on request.
"""
import io
import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .annotate import Stance
from .cohorts import AccountStatus, StatusSnapshot
from .lowcred import DomainError, DomainList, extract_domain, is_lowcred, resolve_url


logger = logging.getLogger(__name__)

DEFAULT_MIN_IMPORTS = 10


class Orientation(str, Enum):
    # row i receives information from column j (i retweets j)
    IMPORTER_ROWS = "importer-rows"
    # row i sends information to column j
    SOURCE_ROWS = "source-rows"


class FlowKind(str, Enum):
    RAW = "raw"
    NORMALIZED = "normalized"
    DENSITY_RATIO = "density-ratio"
    LOWCRED_RATE = "lowcred-rate"
    LOWCRED_SHARE = "lowcred-share"


@dataclass(frozen=True)
class FlowMatrix:
    """Square country matrix; masked entries hold NaN, the infinite class holds ``inf``."""

    countries: Tuple[str, ...]
    values: np.ndarray
    kind: FlowKind
    mask: Optional[np.ndarray] = None
    orientation: Orientation = Orientation.IMPORTER_ROWS

    def __post_init__(self):
        n = len(self.countries)
        values = np.array(self.values, dtype=np.float64)
        if values.shape != (n, n):
            raise ValueError(f"flow matrix must be {n}x{n}, got {values.shape}")
        mask = np.zeros((n, n), dtype=bool) if self.mask is None else np.array(self.mask, dtype=bool)
        values[mask] = np.nan
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "countries", tuple(self.countries))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    def index(self, country: str) -> int:
        return self.countries.index(country)

    def get(self, importer: str, source: str) -> float:
        """Flow from ``source`` into ``importer`` whatever the stored orientation."""
        i, j = self.index(importer), self.index(source)
        if self.orientation is Orientation.SOURCE_ROWS:
            i, j = j, i
        return float(self.values[i, j])

    def oriented(self, orientation: Orientation) -> "FlowMatrix":
        if orientation is self.orientation:
            return self
        return replace(self, values=self.values.T, mask=self.mask.T, orientation=orientation)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.values, index=list(self.countries), columns=list(self.countries))
        frame.index.name = "country"
        return frame


def _cross_pairs(events: Iterable, user_geo, countries: Sequence[str], period=None):
    """Yield (importer index, source index, event) for retweets between selected countries."""
    position = {country: i for i, country in enumerate(countries)}
    for event in events:
        if not event.is_retweet:
            continue
        if period is not None and event.timestamp not in period:
            continue
        i = position.get(user_geo.country_of(event.user_id))
        j = position.get(user_geo.country_of(event.retweeted_user_id))
        if i is None or j is None:
            continue
        yield i, j, event


def raw_rt_matrix(events: Iterable, user_geo, countries: Sequence[str], period=None) -> FlowMatrix:
    """Retweet counts between countries, the diagonal included."""
    countries = tuple(countries)
    counts = np.zeros((len(countries), len(countries)), dtype=np.float64)
    for i, j, _ in _cross_pairs(events, user_geo, countries, period):
        counts[i, j] += 1
    return FlowMatrix(countries, counts, FlowKind.RAW)


def normalize_flow(raw: FlowMatrix) -> FlowMatrix:
    """Observed over expected retweets given both countries' retweet strengths."""
    if raw.kind is not FlowKind.RAW:
        raise ValueError(f"normalize_flow needs a raw matrix, got {raw.kind.value}")
    a = np.nan_to_num(raw.oriented(Orientation.IMPORTER_ROWS).values)
    s_out = a.sum(axis=1)
    s_in = a.sum(axis=0)
    total = float(s_out.sum())
    expected = np.outer(s_out, s_in)
    mask = np.eye(len(raw.countries), dtype=bool) | (expected == 0)
    zero_rows = [raw.countries[i] for i in np.flatnonzero(s_out == 0)]
    zero_cols = [raw.countries[j] for j in np.flatnonzero(s_in == 0)]
    if zero_rows or zero_cols:
        logger.warning(
            "Masking flows of countries with a zero retweet marginal",
            extra={"event": "flow_marginal_zero", "out": zero_rows, "in": zero_cols},
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        values = np.where(mask, np.nan, a / expected * total)
    return FlowMatrix(raw.countries, values, FlowKind.NORMALIZED, mask)


def density_ratio(
    events: Iterable,
    stances: Mapping[str, Mapping[str, Stance]],
    user_geo,
    countries: Sequence[str],
) -> FlowMatrix:
    """Ratio of no-vax to other retweet densities between each pair of countries.

    ``stances`` maps a country to the stance of each of its network users;
    countries without a no-vax user are masked on both their row and column.
    """
    countries = tuple(countries)
    n = len(countries)
    sizes = {Stance.NO_VAX: np.zeros(n), Stance.OTHER: np.zeros(n)}
    for i, country in enumerate(countries):
        for stance in stances.get(country, {}).values():
            sizes[Stance(stance)][i] += 1
    observed = {Stance.NO_VAX: np.zeros((n, n)), Stance.OTHER: np.zeros((n, n))}
    for i, j, event in _cross_pairs(events, user_geo, countries):
        source_stance = stances.get(countries[i], {}).get(event.user_id)
        target_stance = stances.get(countries[j], {}).get(event.retweeted_user_id)
        if source_stance is not None and source_stance == target_stance:
            observed[Stance(source_stance)][i, j] += 1

    with np.errstate(divide="ignore", invalid="ignore"):
        delta_a = observed[Stance.NO_VAX] / np.outer(sizes[Stance.NO_VAX], sizes[Stance.NO_VAX])
        delta_o = observed[Stance.OTHER] / np.outer(sizes[Stance.OTHER], sizes[Stance.OTHER])
        theta = delta_a / delta_o
    no_novax = sizes[Stance.NO_VAX] == 0
    no_other = sizes[Stance.OTHER] == 0
    mask = np.eye(n, dtype=bool) | no_novax[:, None] | no_novax[None, :]
    mask |= no_other[:, None] | no_other[None, :]
    mask |= (delta_a == 0) & (delta_o == 0)
    theta = np.where((delta_o == 0) & (delta_a > 0), np.inf, theta)
    return FlowMatrix(countries, theta, FlowKind.DENSITY_RATIO, mask)


def _lowcred_hits(event, domain_list: DomainList, shorteners) -> int:
    hits = 0
    for url in event.urls:
        try:
            domain = extract_domain(resolve_url(url, shorteners))
        except DomainError:
            continue
        if is_lowcred(domain, domain_list):
            hits += 1
    return hits


def lowcred_import_matrix(
    events: Iterable,
    user_geo,
    countries: Sequence[str],
    domain_list: DomainList,
    min_imports: int = DEFAULT_MIN_IMPORTS,
    shorteners: Optional[Mapping[str, str]] = None,
) -> Tuple[FlowMatrix, FlowMatrix]:
    """Low-credibility rate of cross-border retweets and the origin share of imported URLs."""
    countries = tuple(countries)
    n = len(countries)
    cross = np.zeros((n, n))
    hit = np.zeros((n, n))
    urls = np.zeros((n, n))
    for i, j, event in _cross_pairs(events, user_geo, countries):
        if i == j:
            continue
        cross[i, j] += 1
        found = _lowcred_hits(event, domain_list, shorteners)
        if found:
            hit[i, j] += 1
            urls[i, j] += found

    diagonal = np.eye(n, dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        rate = hit / cross
        imported = urls.sum(axis=1)
        share = urls / imported[:, None]
    rate_mask = diagonal | (cross == 0)
    share_mask = diagonal | (imported < min_imports)[:, None]
    return (
        FlowMatrix(countries, rate, FlowKind.LOWCRED_RATE, rate_mask),
        FlowMatrix(countries, share, FlowKind.LOWCRED_SHARE, share_mask),
    )


@dataclass(frozen=True)
class FlowMarginal:
    country: str
    inflow: float
    outflow: float

    @property
    def net_export(self) -> float:
        return self.outflow - self.inflow


def flow_marginals(raw: FlowMatrix) -> List[FlowMarginal]:
    """Cross-border in-flow and out-flow of every country."""
    a = np.nan_to_num(raw.oriented(Orientation.IMPORTER_ROWS).values).copy()
    np.fill_diagonal(a, 0.0)
    inflow = a.sum(axis=1)
    outflow = a.sum(axis=0)
    return [
        FlowMarginal(country, float(inflow[i]), float(outflow[i]))
        for i, country in enumerate(raw.countries)
    ]


@dataclass(frozen=True)
class ExportRow:
    country: str
    retweet_share: Optional[float]
    lowcred_share: Optional[float]
    suspended_share: Optional[float]


def export_summary(
    events: Iterable,
    user_geo,
    countries: Sequence[str],
    domain_list: DomainList,
    status: Optional[StatusSnapshot] = None,
    shorteners: Optional[Mapping[str, str]] = None,
) -> List[ExportRow]:
    """Each source country's share of cross-border retweets and low-credibility exports."""
    countries = tuple(countries)
    exported: Dict[int, int] = {}
    lowcred: Dict[int, int] = {}
    suspended: Dict[int, int] = {}
    for i, j, event in _cross_pairs(events, user_geo, countries):
        if i == j:
            continue
        exported[j] = exported.get(j, 0) + 1
        if _lowcred_hits(event, domain_list, shorteners):
            lowcred[j] = lowcred.get(j, 0) + 1
            if status is not None and status.status_of(event.retweeted_user_id) is AccountStatus.SUSPENDED:
                suspended[j] = suspended.get(j, 0) + 1
    total = sum(exported.values())
    total_lowcred = sum(lowcred.values())
    rows = []
    for j, country in enumerate(countries):
        rows.append(
            ExportRow(
                country=country,
                retweet_share=exported.get(j, 0) / total if total else None,
                lowcred_share=lowcred.get(j, 0) / total_lowcred if total_lowcred else None,
                suspended_share=(
                    suspended.get(j, 0) / lowcred[j] if status is not None and lowcred.get(j) else None
                ),
            )
        )
    return rows


def write_matrix_csv(matrix: FlowMatrix, handle: io.TextIOBase, comment: Optional[str] = None) -> None:
    """Display orientation, ``NA`` for masked entries and ``inf`` for the infinite class."""
    if comment:
        handle.write(f"# {comment}\n")
    matrix.oriented(Orientation.IMPORTER_ROWS).to_frame().to_csv(
        handle, na_rep="NA", float_format="%.10g", lineterminator="\n"
    )


def read_matrix_csv(lines: Iterable[str], kind: FlowKind) -> FlowMatrix:
    frame = pd.read_csv(
        io.StringIO("".join(line for line in lines if not line.startswith("#"))),
        index_col=0,
        na_values=["NA"],
        keep_default_na=False,
    )
    values = frame.to_numpy(dtype=np.float64)
    return FlowMatrix(tuple(frame.columns), values, kind, np.isnan(values))
