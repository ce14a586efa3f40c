"""Ground-truth generators: block-model graphs and multi-country event corpora."""
import io
import logging
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, ValidationInfo, field_validator, model_validator

from .annotate import Label, LabelRecord, Sample, Stance
from .cluster import Partition
from .cohorts import AccountStatus, StatusSnapshot
from .config import ConfigError, dump_config, format_errors, load_keyvalue, split_list
from .geolocate import UserGeo
from .graph import WeightedGraph
from .ingest import Period, TweetEvent, format_timestamp, parse_timestamp, write_events


logger = logging.getLogger(__name__)

TOY_PLACES = {
    "FR": ("France", "Paris", "Lyon", "Marseille"),
    "DE": ("Deutschland", "Berlin", "München", "Hamburg"),
    "IT": ("Italia", "Roma", "Milano", "Napoli"),
    "ES": ("España", "Madrid", "Barcelona", "Sevilla"),
    "GB": ("United Kingdom", "London", "Manchester", "Leeds"),
    "US": ("United States", "New York", "Los Angeles", "Chicago"),
}
TOY_STOPLIST = ("worldwide", "earth", "everywhere")
TOY_KEYWORDS = {
    "en": ("vaccine", "vaccination"),
    "fr": ("vaccin", "vaccination"),
    "de": ("impfung", "impfstoff"),
    "it": ("vaccino", "vaccinazione"),
    "es": ("vacuna", "vacunación"),
}
LOWCRED_DOMAINS = (
    "zerohedge.com",
    "infowars.com",
    "naturalnews.com",
    "childrenshealthdefense.org",
    "thegatewaypundit.com",
)
MAINSTREAM_DOMAINS = ("who.int", "bbc.co.uk", "lemonde.fr", "spiegel.de", "repubblica.it", "elpais.com")
YOUTUBE_URL = "https://youtu.be/{slug}"
ARTICLES_PER_DOMAIN = 4
REFERENCE_LANG = "en"
STANCE_RATES = {
    "lowcred_rate": {Stance.NO_VAX: 0.26, Stance.OTHER: 0.024},
    "youtube_rate": {Stance.NO_VAX: 0.15, Stance.OTHER: 0.03},
    "suspended_rate": {Stance.NO_VAX: 0.133, Stance.OTHER: 0.018},
}


class SbmSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    sizes: List[int] = Field(min_length=1)
    p_in: float = Field(ge=0.0, le=1.0)
    p_out: float = Field(ge=0.0, le=1.0)
    weight_mean: float = Field(1.0, ge=1.0)
    seed: int = Field(0, ge=0)

    @field_validator("sizes")
    @classmethod
    def _positive_sizes(cls, sizes: List[int]) -> List[int]:
        if any(size < 1 for size in sizes):
            raise ValueError("block sizes must be positive")
        return sizes

    @model_validator(mode="after")
    def _ordered_probabilities(self) -> "SbmSpec":
        if self.p_out > self.p_in:
            raise ValueError("p_out must not exceed p_in")
        return self


def _node_id(index: int) -> str:
    return f"u{index + 1:06d}"


def sbm_membership(spec: SbmSpec) -> Dict[str, int]:
    membership = {}
    index = 0
    for block, size in enumerate(spec.sizes):
        for _ in range(size):
            membership[_node_id(index)] = block
            index += 1
    return membership


def sbm_generate(spec: SbmSpec) -> WeightedGraph:
    """Undirected block-model graph with geometric edge weights of mean ``weight_mean``."""
    structure_seed, weight_seed = np.random.SeedSequence(spec.seed).spawn(2)
    k = len(spec.sizes)
    probs = [[spec.p_in if a == b else spec.p_out for b in range(k)] for a in range(k)]
    graph = nx.stochastic_block_model(
        spec.sizes, probs, seed=int(structure_seed.generate_state(1)[0]), directed=False
    )
    pairs = sorted((min(u, v), max(u, v)) for u, v in graph.edges())
    rng = np.random.default_rng(weight_seed)
    weights = rng.geometric(1.0 / spec.weight_mean, size=len(pairs))
    n = sum(spec.sizes)
    rows = np.fromiter((u for u, _ in pairs), dtype=np.int64, count=len(pairs))
    cols = np.fromiter((v for _, v in pairs), dtype=np.int64, count=len(pairs))
    return WeightedGraph(False, [_node_id(i) for i in range(n)], rows, cols, weights)


class CommunitySpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    stance: Stance
    share: float = Field(gt=0.0)


class CountrySpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    users: int = Field(ge=4)
    lang: str
    communities: List[CommunitySpec] = Field(min_length=1)

    @field_validator("communities", mode="before")
    @classmethod
    def _parse_mix(cls, value):
        # "A:0.3,O:0.7" in key-value files
        if isinstance(value, str):
            mix = []
            for item in split_list(value):
                stance, _, share = item.partition(":")
                mix.append({"stance": stance.strip(), "share": share.strip() or "1"})
            return mix
        return value


class PeriodSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    start: datetime
    end: datetime

    @field_validator("start", "end", mode="before")
    @classmethod
    def _parse_instant(cls, value):
        return parse_timestamp(value) if isinstance(value, str) else value


class CorpusSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    seed: int = Field(0, ge=0)
    countries: Dict[str, CountrySpec] = Field(min_length=1)
    periods: Dict[str, PeriodSpec] = Field(min_length=1)
    originals_per_user: float = Field(2.0, ge=0.0)
    retweets_per_user: float = Field(8.0, ge=0.0)
    intra_rate: float = Field(0.92, ge=0.0)
    inter_rate: float = Field(0.05, ge=0.0)
    cross_rate: float = Field(0.03, ge=0.0)
    novax_cross_multiplier: float = Field(10.0, ge=0.0)
    url_rate: float = Field(0.6, ge=0.0, le=1.0)
    english_share: float = Field(0.1, ge=0.0, le=1.0)
    noise_share: float = Field(0.05, ge=0.0, le=1.0)
    unlocated_share: float = Field(0.02, ge=0.0, le=1.0)
    deleted_rate: float = Field(0.01, ge=0.0, le=1.0)
    influence_shape: float = Field(2.0, gt=0.0)
    lowcred_rate: Dict[Stance, float] = Field(default_factory=lambda: dict(STANCE_RATES["lowcred_rate"]))
    youtube_rate: Dict[Stance, float] = Field(default_factory=lambda: dict(STANCE_RATES["youtube_rate"]))
    suspended_rate: Dict[Stance, float] = Field(default_factory=lambda: dict(STANCE_RATES["suspended_rate"]))
    novax_label_rate: float = Field(0.85, ge=0.0, le=1.0)
    provax_label_rate: float = Field(0.7, ge=0.0, le=1.0)

    @field_validator("countries", mode="before")
    @classmethod
    def _upper_codes(cls, value):
        return {code.strip().upper(): spec for code, spec in value.items()}

    @field_validator("lowcred_rate", "youtube_rate", "suspended_rate")
    @classmethod
    def _probabilities(cls, value: Dict[Stance, float], info: ValidationInfo) -> Dict[Stance, float]:
        value = {**STANCE_RATES[info.field_name], **value}
        for stance in Stance:
            rate = value[stance]
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"rate for stance {stance.value} must lie in [0, 1]")
        return value

    @model_validator(mode="after")
    def _some_retweet_target(self) -> "CorpusSpec":
        if self.intra_rate + self.inter_rate + self.cross_rate <= 0:
            raise ValueError("intra_rate, inter_rate and cross_rate cannot all be zero")
        for name, period in self.periods.items():
            if period.start >= period.end:
                raise ValueError(f"period {name!r} does not start before it ends")
        for stance in Stance:
            if self.lowcred_rate[stance] + self.youtube_rate[stance] > 1.0:
                raise ValueError(f"lowcred_rate and youtube_rate of stance {stance.value} exceed 1 together")
        return self

    @classmethod
    def from_keyvalue(cls, values: Mapping[str, str]) -> "CorpusSpec":
        """Build a spec from dotted keys such as ``country.FR.users=300``."""
        data: Dict[str, object] = {}
        for key, value in values.items():
            parts = key.split(".")
            if parts[0] in ("country", "period") and len(parts) == 3:
                group = "countries" if parts[0] == "country" else "periods"
                data.setdefault(group, {}).setdefault(parts[1], {})[parts[2]] = value
            elif len(parts) == 2:
                data.setdefault(parts[0], {})[parts[1]] = value
            else:
                data[key] = value
        try:
            return cls.model_validate(data)
        except ValidationError as exc:
            raise ConfigError(format_errors(exc)) from exc

    @classmethod
    def demo(cls, seed: int = 0) -> "CorpusSpec":
        mix = [{"stance": "A", "share": 0.3}, {"stance": "O", "share": 0.7}]
        return cls.model_validate(
            {
                "seed": seed,
                "cross_rate": 0.12,
                "url_rate": 0.8,
                "countries": {
                    "DE": {"users": 300, "lang": "de", "communities": mix},
                    "FR": {"users": 300, "lang": "fr", "communities": mix},
                    "IT": {"users": 300, "lang": "it", "communities": mix},
                },
                "periods": {
                    "pre": {"start": "2020-11-01T00:00:00Z", "end": "2020-12-01T00:00:00Z"},
                    "post": {"start": "2020-12-01T00:00:00Z", "end": "2021-01-01T00:00:00Z"},
                },
            }
        )


def load_corpus_spec(path: Union[Path, str]) -> CorpusSpec:
    return CorpusSpec.from_keyvalue(load_keyvalue(path))


@dataclass
class SynthCorpus:
    spec: CorpusSpec
    events: List[TweetEvent]
    countries: Dict[str, str]
    communities: Dict[str, int]
    stances: Dict[str, Stance]
    tweet_labels: Dict[str, Label]
    status: StatusSnapshot
    places: Dict[str, str] = field(default_factory=dict)

    def user_geo(self) -> UserGeo:
        return UserGeo(countries=dict(self.countries))

    def truth_partition(self, country: str) -> Partition:
        return Partition(
            {user: self.communities[user] for user, code in self.countries.items() if code == country}
        )

    def periods(self) -> List[Period]:
        ordered = sorted(self.spec.periods.items(), key=lambda item: (item[1].start, item[0]))
        return [Period(name, period.start, period.end) for name, period in ordered]

    def keywords(self) -> Dict[str, Tuple[str, ...]]:
        langs = {REFERENCE_LANG} | {country.lang for country in self.spec.countries.values()}
        return {lang: TOY_KEYWORDS.get(lang, TOY_KEYWORDS[REFERENCE_LANG]) for lang in sorted(langs)}


def _places(code: str) -> Tuple[str, ...]:
    return TOY_PLACES.get(code, (f"Republic of {code}", f"{code} City"))


def _location(rng: np.random.Generator, code: str) -> str:
    places = _places(code)
    city = places[1 + rng.integers(len(places) - 1)] if len(places) > 1 else places[0]
    style = rng.integers(4)
    if style == 0:
        return city
    if style == 1:
        return f"{city}, {places[0]}"
    if style == 2:
        return f"📍 {city.lower()}"
    return places[0]


def _community_sizes(users: int, shares: Sequence[float]) -> List[int]:
    total = sum(shares)
    sizes = [int(users * share / total) for share in shares]
    sizes[-1] += users - sum(sizes)
    return sizes


class _Pools:
    """Shared article URLs per community, split by credibility."""

    def __init__(self, community_key: str):
        slug = community_key.lower()
        self.lowcred = [
            f"https://{domain}/{slug}/{k}" for domain in LOWCRED_DOMAINS for k in range(ARTICLES_PER_DOMAIN)
        ]
        self.mainstream = [
            f"https://www.{domain}/{slug}/{k}" for domain in MAINSTREAM_DOMAINS for k in range(ARTICLES_PER_DOMAIN)
        ]
        self.youtube = [YOUTUBE_URL.format(slug=f"{slug}{k}") for k in range(ARTICLES_PER_DOMAIN)]


def synth_corpus(spec: CorpusSpec) -> SynthCorpus:
    """Generate an event log realizing the corpus spec, with exact ground truth alongside."""
    rng = np.random.default_rng(spec.seed)
    codes = sorted(spec.countries)

    users: List[str] = []
    country_of: Dict[str, str] = {}
    community_of: Dict[str, int] = {}
    stance_of: Dict[str, Stance] = {}
    location_of: Dict[str, str] = {}
    for code in codes:
        country = spec.countries[code]
        sizes = _community_sizes(country.users, [c.share for c in country.communities])
        index = 0
        for community, size in enumerate(sizes):
            for _ in range(size):
                user = f"{code.lower()}{index:05d}"
                index += 1
                users.append(user)
                country_of[user] = code
                community_of[user] = community
                stance_of[user] = country.communities[community].stance
                location_of[user] = (
                    TOY_STOPLIST[rng.integers(len(TOY_STOPLIST))].title()
                    if rng.random() < spec.unlocated_share
                    else _location(rng, code)
                )
    influence = {user: float(rng.pareto(spec.influence_shape) + 1.0) for user in users}
    pools = {
        (code, community): _Pools(f"{code}{community}")
        for code in codes
        for community in range(len(spec.countries[code].communities))
    }
    keywords = {lang: TOY_KEYWORDS.get(lang, TOY_KEYWORDS[REFERENCE_LANG]) for lang in TOY_KEYWORDS}

    events: List[TweetEvent] = []
    tweet_labels: Dict[str, Label] = {}
    counter = 0
    rates = np.array([spec.intra_rate, spec.inter_rate, spec.cross_rate], dtype=np.float64)
    rates = rates / rates.sum()

    def next_id() -> str:
        nonlocal counter
        counter += 1
        return f"t{counter:09d}"

    kind_of: Dict[str, str] = {}

    def url_kind(user: str) -> Optional[str]:
        if rng.random() >= spec.url_rate:
            return None
        stance = stance_of[user]
        draw = rng.random()
        if draw < spec.lowcred_rate[stance]:
            return "lowcred"
        if draw < spec.lowcred_rate[stance] + spec.youtube_rate[stance]:
            return "youtube"
        return "mainstream"

    def draw_urls(
        user: str, owner: str, source: Optional[TweetEvent] = None
    ) -> Tuple[Optional[str], Tuple[str, ...]]:
        """URL class follows the sharer's stance; articles come from the owner's community pool."""
        kind = url_kind(user)
        if kind is None:
            return None, ()
        # a retweet keeps the source's URL whenever it is of the drawn class
        if source is not None and source.urls and kind_of.get(source.tweet_id) == kind:
            return kind, source.urls
        articles = getattr(pools[(country_of[owner], community_of[owner])], kind)
        return kind, (articles[rng.integers(len(articles))],)

    def true_label(user: str) -> Label:
        draw = rng.random()
        if stance_of[user] is Stance.NO_VAX:
            return Label.NO_VAX if draw < spec.novax_label_rate else Label.OTHER
        return Label.PRO_VAX if draw < spec.provax_label_rate else Label.OTHER

    for name, period in sorted(spec.periods.items(), key=lambda item: (item[1].start, item[0])):
        span = int((period.end - period.start).total_seconds())
        originals: Dict[str, List[TweetEvent]] = {}
        for user in users:
            native = spec.countries[country_of[user]].lang
            for _ in range(int(rng.poisson(spec.originals_per_user))):
                lang = REFERENCE_LANG if rng.random() < spec.english_share else native
                words = keywords.get(lang, keywords[REFERENCE_LANG])
                keyword = words[rng.integers(len(words))]
                noise = rng.random() < spec.noise_share
                label = true_label(user)
                tweet_id = next_id()
                url_class, urls = draw_urls(user, user)
                text = f"daily thread {tweet_id}" if noise else f"{keyword} {label.value} #{tweet_id}"
                event = TweetEvent(
                    tweet_id=tweet_id,
                    user_id=user,
                    timestamp=period.start + timedelta(seconds=int(rng.integers(span))),
                    lang=lang,
                    text=text,
                    urls=urls,
                    profile_location=location_of[user],
                )
                if url_class is not None:
                    kind_of[tweet_id] = url_class
                events.append(event)
                if not noise:
                    tweet_labels[event.tweet_id] = label
                    originals.setdefault(user, []).append(event)

        authors = [user for user in users if user in originals]
        if not authors:
            continue
        targets = _TargetIndex(authors, country_of, community_of, stance_of, influence, spec)
        for user in users:
            for _ in range(int(rng.poisson(spec.retweets_per_user))):
                kind = int(rng.choice(3, p=rates))
                target = targets.draw(rng, user, kind)
                if target is None or target == user:
                    continue
                source = originals[target][rng.integers(len(originals[target]))]
                remaining = int((period.end - source.timestamp).total_seconds())
                event = TweetEvent(
                    tweet_id=next_id(),
                    user_id=user,
                    timestamp=source.timestamp + timedelta(seconds=int(rng.integers(max(remaining, 1)))),
                    lang=source.lang,
                    text=f"RT @{target}: {source.text}",
                    retweeted_user_id=target,
                    retweeted_tweet_id=source.tweet_id,
                    urls=draw_urls(user, target, source)[1],
                    profile_location=location_of[user],
                )
                events.append(event)
                tweet_labels[event.tweet_id] = tweet_labels[source.tweet_id]
        logger.debug(
            "Synthetic period generated",
            extra={"event": "synth_period", "period": name, "events": len(events)},
        )

    statuses: Dict[str, AccountStatus] = {}
    for user in users:
        draw = rng.random()
        suspended = spec.suspended_rate[stance_of[user]]
        if draw < suspended:
            statuses[user] = AccountStatus.SUSPENDED
        elif draw < suspended + spec.deleted_rate:
            statuses[user] = AccountStatus.DELETED
        else:
            statuses[user] = AccountStatus.ACTIVE

    events.sort(key=lambda event: (event.timestamp, event.tweet_id))
    places = {}
    for code in codes:
        for place in _places(code):
            places[place] = code
    logger.info(
        "Synthetic corpus generated",
        extra={"event": "synth_corpus", "users": len(users), "events": len(events)},
    )
    return SynthCorpus(
        spec=spec,
        events=events,
        countries=country_of,
        communities=community_of,
        stances=stance_of,
        tweet_labels=tweet_labels,
        status=StatusSnapshot(statuses=statuses),
        places=places,
    )


class _TargetIndex:
    """Weighted retweet-target draws: own community, own country, or abroad."""

    def __init__(self, authors, country_of, community_of, stance_of, influence, spec: CorpusSpec):
        self.country_of = country_of
        self.community_of = community_of
        self.stance_of = stance_of
        self.groups: Dict[Tuple[str, int], List[str]] = {}
        for user in authors:
            self.groups.setdefault((country_of[user], community_of[user]), []).append(user)
        self.influence = influence
        self.multiplier = spec.novax_cross_multiplier
        self._cache: Dict[Tuple, Tuple[List[str], np.ndarray]] = {}
        self.authors = authors

    def _candidates(self, key: Tuple) -> Tuple[List[str], np.ndarray]:
        if key not in self._cache:
            kind, code, community, stance = key
            if kind == 0:
                pool = self.groups.get((code, community), [])
                weights = [self.influence[user] for user in pool]
            elif kind == 1:
                pool = [
                    user
                    for (group_code, group), members in sorted(self.groups.items())
                    if group_code == code and group != community
                    for user in members
                ]
                weights = [self.influence[user] for user in pool]
            else:
                pool = [user for user in self.authors if self.country_of[user] != code]
                weights = [
                    self.influence[user]
                    * (
                        self.multiplier
                        if stance is Stance.NO_VAX and self.stance_of[user] is Stance.NO_VAX
                        else 1.0
                    )
                    for user in pool
                ]
            self._cache[key] = (pool, np.cumsum(np.array(weights, dtype=np.float64)))
        return self._cache[key]

    def draw(self, rng: np.random.Generator, user: str, kind: int) -> Optional[str]:
        key = (kind, self.country_of[user], self.community_of[user], self.stance_of[user])
        pool, cumulative = self._candidates(key)
        if not pool or cumulative[-1] <= 0:
            return None
        slot = int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side="right"))
        return pool[min(slot, len(pool) - 1)]


def simulate_labels(
    samples: Iterable[Sample],
    tweet_labels: Mapping[str, Label],
    round: int,
    annotators: Sequence[str] = ("ann1", "ann2"),
    accuracy: float = 0.9,
    seed: int = 0,
) -> List[LabelRecord]:
    """Annotator labels drawn around the true tweet labels; errors pick another label uniformly."""
    if not 0.0 <= accuracy <= 1.0:
        raise ValueError("accuracy must lie in [0, 1]")
    rng = np.random.default_rng([seed, round])
    labels = list(Label)
    records = []
    for sample in samples:
        truth = tweet_labels.get(sample.tweet_id, Label.OTHER)
        for annotator in annotators:
            label = truth
            if rng.random() >= accuracy:
                wrong = [other for other in labels if other is not truth]
                label = wrong[rng.integers(len(wrong))]
            records.append(LabelRecord(sample.tweet_id, sample.community_id, round, annotator, label))
    return records


def read_tweet_labels(lines: Iterable[str]) -> Dict[str, Label]:
    labels = {}
    for line in lines:
        line = line.rstrip("\n")
        if not line.strip() or line.startswith("#"):
            continue
        tweet, _, label = line.partition("\t")
        labels[tweet] = Label(label)
    return labels


def write_corpus(corpus: SynthCorpus, directory: Union[Path, str]) -> Path:
    """Write the event log, every pipeline input and the ground truth; returns the config path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    spec = corpus.spec

    with (directory / "events.jsonl").open("w", encoding="utf-8") as handle:
        write_events(corpus.events, handle)
    _write_lines(directory / "gazetteer.tsv", (f"{place}\t{code}" for place, code in sorted(corpus.places.items())))
    _write_lines(directory / "stoplist.txt", TOY_STOPLIST)
    _write_lines(
        directory / "keywords.tsv",
        (f"{lang}\t{word}" for lang, words in corpus.keywords().items() for word in words),
    )
    _write_lines(
        directory / "periods.tsv",
        (
            f"{period.name}\t{format_timestamp(period.start)}\t{format_timestamp(period.end)}"
            for period in corpus.periods()
        ),
    )
    _write_lines(
        directory / "spoken_languages.tsv",
        (f"{code}\t{spec.countries[code].lang},{REFERENCE_LANG}" for code in sorted(spec.countries)),
    )
    _write_lines(directory / "lowcred_domains.txt", (f"{domain}\tsynthetic" for domain in LOWCRED_DOMAINS))
    _write_lines(
        directory / "status.tsv",
        (f"{user}\t{status.value}" for user, status in sorted(corpus.status.statuses.items())),
    )
    _write_lines(
        directory / "truth_users.tsv",
        (
            f"{user}\t{corpus.countries[user]}\t{corpus.communities[user]}\t{corpus.stances[user].value}"
            for user in sorted(corpus.countries)
        ),
    )
    _write_lines(
        directory / "truth_tweets.tsv",
        (f"{tweet}\t{label.value}" for tweet, label in sorted(corpus.tweet_labels.items())),
    )

    smallest = min(country.users for country in spec.countries.values())
    settings = {
        "events": "events.jsonl",
        "gazetteer": "gazetteer.tsv",
        "stoplist": "stoplist.txt",
        "keywords": "keywords.tsv",
        "periods": "periods.tsv",
        "spoken_languages": "spoken_languages.tsv",
        "domain_lists": "lowcred_domains.txt",
        "status": "status.tsv",
        "labels": "labels.tsv",
        "covered_languages": sorted(corpus.keywords()),
        "out": "out",
        "min_users": max(1, smallest // 4),
        "seed": spec.seed,
    }
    config_path = directory / "vaxnet.cfg"
    config_path.write_text(dump_config(settings), encoding="utf-8")
    logger.info(
        "Synthetic corpus written",
        extra={"event": "synth_written", "directory": str(directory), "events": len(corpus.events)},
    )
    return config_path


def _write_lines(path: Path, lines: Iterable[str]) -> None:
    buffer = io.StringIO()
    for line in lines:
        buffer.write(f"{line}\n")
    path.write_text(buffer.getvalue(), encoding="utf-8")
