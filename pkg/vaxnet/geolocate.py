"""Profile-location geolocation of users and country selection."""
import logging
import unicodedata
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Set, Tuple, Union


logger = logging.getLogger(__name__)

COUNTRY_CHANGE = "country-change"
MANUAL = "manual"


def _is_edge_noise(ch: str) -> bool:
    category = unicodedata.category(ch)
    return ch.isspace() or category[0] in ("P", "S") or category in ("Cf", "Mn", "Me")


def normalize_place(text: str) -> str:
    """Case-fold, trim, and drop emoji or punctuation at both ends."""
    folded = text.casefold()
    start, end = 0, len(folded)
    while start < end and _is_edge_noise(folded[start]):
        start += 1
    while end > start and _is_edge_noise(folded[end - 1]):
        end -= 1
    return " ".join(folded[start:end].split())


@dataclass(frozen=True)
class Gazetteer:
    places: Mapping[str, str]
    stoplist: FrozenSet[str] = frozenset()

    @classmethod
    def build(cls, places: Mapping[str, str], stoplist: Iterable[str] = ()) -> "Gazetteer":
        normalized = {}
        for name, country in places.items():
            key = normalize_place(name)
            if key:
                normalized[key] = country.strip().upper()
        return cls(
            places=normalized,
            stoplist=frozenset(normalize_place(term) for term in stoplist if normalize_place(term)),
        )


class Exclusion(NamedTuple):
    user_id: str
    reason: str


class FlaggedUser(NamedTuple):
    user_id: str
    country_i: str
    country_j: str
    share: float
    period: str


@dataclass(frozen=True)
class UserGeo:
    countries: Mapping[str, str] = field(default_factory=dict)
    excluded: Tuple[Exclusion, ...] = ()
    flagged: Tuple[FlaggedUser, ...] = ()

    def country_of(self, user_id: Optional[str]) -> Optional[str]:
        if user_id is None:
            return None
        return self.countries.get(user_id)

    def users_in(self, country: str) -> Set[str]:
        return {user for user, code in self.countries.items() if code == country}

    def __len__(self) -> int:
        return len(self.countries)


def match_location(raw_text: Optional[str], gazetteer: Gazetteer) -> Optional[str]:
    """Resolve a free-text profile location to a country code, or ``None``."""
    if not raw_text:
        return None
    whole = normalize_place(raw_text)
    if not whole:
        return None
    if whole in gazetteer.stoplist:
        return None
    segments = [normalize_place(segment) for segment in whole.split(",")]
    segments = [segment for segment in segments if segment]
    if any(segment in gazetteer.stoplist for segment in segments):
        return None

    best = None
    for position, segment in enumerate(segments):
        if segment in gazetteer.places:
            key = (len(segment), position)
            if best is None or key > best[0]:
                best = (key, gazetteer.places[segment])
    return best[1] if best is not None else None


def assign_countries(
    events_by_period: Mapping[str, Sequence],
    gazetteer: Gazetteer,
    min_pair_retweets: int = 1,
) -> UserGeo:
    """Geolocate users per period, drop country changers, flag retweet concentrators."""
    if not events_by_period:
        raise ValueError("assign_countries needs at least one period")

    resolved: Dict[str, Set[str]] = defaultdict(set)
    for events in events_by_period.values():
        latest: Dict[str, Tuple] = {}
        for order, event in enumerate(events):
            if event.profile_location is None:
                continue
            key = (event.timestamp, order)
            current = latest.get(event.user_id)
            if current is None or key >= current[0]:
                latest[event.user_id] = (key, event.profile_location)
        for user, (_, location) in latest.items():
            country = match_location(location, gazetteer)
            if country is not None:
                resolved[user].add(country)

    countries = {}
    excluded = []
    for user in sorted(resolved):
        codes = resolved[user]
        if len(codes) > 1:
            excluded.append(Exclusion(user, COUNTRY_CHANGE))
        else:
            countries[user] = next(iter(codes))

    flagged = []
    for period, events in events_by_period.items():
        pair_totals: Counter = Counter()
        received: Counter = Counter()
        for event in events:
            if not event.is_retweet:
                continue
            source = countries.get(event.user_id)
            target = countries.get(event.retweeted_user_id)
            if source is None or target is None or source == target:
                continue
            pair_totals[(source, target)] += 1
            received[(source, target, event.retweeted_user_id)] += 1
        for (source, target, user), count in sorted(received.items()):
            total = pair_totals[(source, target)]
            if total < min_pair_retweets:
                continue
            share = count / total
            if share > 0.5:
                flagged.append(FlaggedUser(user, source, target, share, period))

    logger.info(
        "Users geolocated",
        extra={
            "event": "users_geolocated",
            "located": len(countries),
            "excluded": len(excluded),
            "flagged": len(flagged),
        },
    )
    return UserGeo(countries=countries, excluded=tuple(excluded), flagged=tuple(flagged))


def apply_exclusions(user_geo: UserGeo, user_ids: Iterable[str]) -> UserGeo:
    """Drop users removed after manual inspection of the flagged report."""
    drop = set(user_ids) & set(user_geo.countries)
    if not drop:
        return user_geo
    countries = {user: code for user, code in user_geo.countries.items() if user not in drop}
    excluded = user_geo.excluded + tuple(Exclusion(user, MANUAL) for user in sorted(drop))
    return replace(user_geo, countries=countries, excluded=excluded)


def eligible_countries(
    user_geo: UserGeo,
    events_by_period: Mapping[str, Sequence],
    min_users: int = 2000,
) -> Set[str]:
    """Countries with more than ``min_users`` active geolocated users in every period."""
    if min_users < 1:
        raise ValueError("min_users must be at least 1")
    eligible: Optional[Set[str]] = None
    for events in events_by_period.values():
        active: Dict[str, Set[str]] = defaultdict(set)
        for event in events:
            country = user_geo.country_of(event.user_id)
            if country is not None:
                active[country].add(event.user_id)
        passing = {country for country, users in active.items() if len(users) > min_users}
        eligible = passing if eligible is None else eligible & passing
    return eligible or set()


def load_gazetteer(
    path: Union[Path, str],
    stoplist_path: Optional[Union[Path, str]] = None,
) -> Gazetteer:
    places = {}
    with Path(path).open(encoding="utf-8") as handle:
        for line in handle:
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            name, _, country = line.partition("\t")
            if country.strip():
                places[name] = country
    stoplist: List[str] = []
    if stoplist_path is not None:
        stoplist = read_lines(stoplist_path)
    gazetteer = Gazetteer.build(places, stoplist)
    logger.info(
        "Gazetteer loaded",
        extra={
            "event": "gazetteer_loaded",
            "places": len(gazetteer.places),
            "stoplist": len(gazetteer.stoplist),
        },
    )
    return gazetteer


def read_lines(path: Union[Path, str]) -> List[str]:
    """One entry per line; used for stoplists and manual exclusion files."""
    with Path(path).open(encoding="utf-8") as handle:
        return [
            line.strip() for line in handle if line.strip() and not line.startswith("#")
        ]
