"""Event log parsing, keyword filtering and period windowing."""
import io
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path
from typing import (
    Any,
    Dict,
    FrozenSet,
    Iterable,
    Iterator,
    List,
    Mapping,
    Optional,
    Sequence,
    Tuple,
    Union,
)

from .lowcred import DomainError, extract_domain


logger = logging.getLogger(__name__)

RECORD_KEYS = (
    "tweet_id",
    "user_id",
    "timestamp",
    "lang",
    "text",
    "retweeted_user_id",
    "retweeted_tweet_id",
    "urls",
    "profile_location",
)
REQUIRED_KEYS = frozenset({"tweet_id", "user_id", "timestamp", "lang", "text", "urls"})

MAX_MALFORMED_SHARE = 0.5
DEFAULT_REFERENCE_LANG = "en"

URL_PATTERN = re.compile(r"(?:https?://|www\.)\S+", re.IGNORECASE)
TOKEN_PATTERN = re.compile(r"\w+")


class EventFormatError(ValueError):
    """Raised when a single record violates the event log format."""


class EventLogError(ValueError):
    """Raised when a whole log looks like the wrong file."""


class LanguageError(ValueError):
    """Raised when no dominant language can be chosen for a country."""


def parse_timestamp(value: str) -> datetime:
    """Parse an ISO-8601 instant with an explicit zone and return it in UTC."""
    if not isinstance(value, str):
        raise EventFormatError("timestamp must be a string")
    text = value.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    try:
        parsed = datetime.fromisoformat(text)
    except ValueError as exc:
        raise EventFormatError(f"timestamp does not parse: {value!r}") from exc
    if parsed.tzinfo is None:
        raise EventFormatError(f"timestamp has no zone: {value!r}")
    return parsed.astimezone(timezone.utc)


def format_timestamp(value: datetime) -> str:
    return value.astimezone(timezone.utc).isoformat()


@dataclass(frozen=True)
class TweetEvent:
    tweet_id: str
    user_id: str
    timestamp: datetime
    lang: str
    text: str
    retweeted_user_id: Optional[str] = None
    retweeted_tweet_id: Optional[str] = None
    urls: Tuple[str, ...] = ()
    profile_location: Optional[str] = None

    def __post_init__(self):
        if not self.tweet_id:
            raise EventFormatError("tweet_id is empty")
        if not self.user_id:
            raise EventFormatError("user_id is empty")
        if (self.retweeted_user_id is None) != (self.retweeted_tweet_id is None):
            raise EventFormatError(
                "retweeted_user_id and retweeted_tweet_id must be present together"
            )
        if self.timestamp.tzinfo is None:
            raise EventFormatError("timestamp has no zone")
        for url in self.urls:
            try:
                extract_domain(url)
            except DomainError as exc:
                raise EventFormatError(str(exc)) from exc

    @property
    def is_retweet(self) -> bool:
        return self.retweeted_user_id is not None

    @classmethod
    def from_record(cls, record: Mapping[str, Any]) -> "TweetEvent":
        if not isinstance(record, Mapping):
            raise EventFormatError("record is not a key-value object")
        unknown = set(record) - set(RECORD_KEYS)
        if unknown:
            raise EventFormatError(f"unknown keys: {', '.join(sorted(unknown))}")
        missing = REQUIRED_KEYS - set(record)
        if missing:
            raise EventFormatError(f"missing keys: {', '.join(sorted(missing))}")

        def text_field(name: str, optional: bool = False) -> Optional[str]:
            value = record.get(name)
            if value is None and optional:
                return None
            if not isinstance(value, str):
                raise EventFormatError(f"{name} must be a string")
            return value

        urls = record["urls"]
        if not isinstance(urls, list) or not all(isinstance(url, str) for url in urls):
            raise EventFormatError("urls must be an array of strings")

        return cls(
            tweet_id=text_field("tweet_id"),
            user_id=text_field("user_id"),
            timestamp=parse_timestamp(record["timestamp"]),
            lang=text_field("lang"),
            text=text_field("text"),
            retweeted_user_id=text_field("retweeted_user_id", optional=True),
            retweeted_tweet_id=text_field("retweeted_tweet_id", optional=True),
            urls=tuple(urls),
            profile_location=text_field("profile_location", optional=True),
        )

    def to_record(self) -> Dict[str, Any]:
        record: Dict[str, Any] = {
            "tweet_id": self.tweet_id,
            "user_id": self.user_id,
            "timestamp": format_timestamp(self.timestamp),
            "lang": self.lang,
            "text": self.text,
        }
        if self.retweeted_user_id is not None:
            record["retweeted_user_id"] = self.retweeted_user_id
            record["retweeted_tweet_id"] = self.retweeted_tweet_id
        record["urls"] = list(self.urls)
        if self.profile_location is not None:
            record["profile_location"] = self.profile_location
        return record


def serialize_event(event: TweetEvent) -> str:
    """One event log line, without the trailing newline."""
    return json.dumps(event.to_record(), ensure_ascii=False, separators=(",", ":"))


@dataclass(frozen=True)
class Period:
    name: str
    start: datetime
    end: datetime

    def __post_init__(self):
        if not self.name:
            raise ValueError("period name is empty")
        if self.start >= self.end:
            raise ValueError(f"period {self.name!r} does not start before it ends")

    def __contains__(self, instant: datetime) -> bool:
        return self.start <= instant < self.end


@dataclass(frozen=True)
class KeywordSet:
    keywords: Mapping[str, FrozenSet[Tuple[str, ...]]]

    def __post_init__(self):
        for lang, entries in self.keywords.items():
            if not entries:
                raise ValueError(f"no keywords declared for language {lang!r}")

    @classmethod
    def from_lists(cls, lists: Mapping[str, Iterable[str]]) -> "KeywordSet":
        keywords = {}
        for lang, words in lists.items():
            entries = frozenset(
                tokens for tokens in (tuple(tokenize(word)) for word in words) if tokens
            )
            keywords[lang] = entries
        return cls(keywords=keywords)

    def for_language(self, lang: str) -> FrozenSet[Tuple[str, ...]]:
        return self.keywords.get(lang, frozenset())


@dataclass
class EventBatch:
    """Events accepted from one log plus the rejected line numbers and reasons."""

    events: Tuple[TweetEvent, ...] = ()
    rejected: List[Tuple[int, str]] = field(default_factory=list)

    def __iter__(self) -> Iterator[TweetEvent]:
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def __getitem__(self, index):
        return self.events[index]


def parse_events(stream: Union[Iterable[bytes], Iterable[str]]) -> EventBatch:
    """Parse newline-delimited JSON records, skipping and counting malformed lines."""
    events: List[TweetEvent] = []
    rejected: List[Tuple[int, str]] = []
    seen_ids = set()
    considered = 0

    for line_no, raw_line in enumerate(stream, start=1):
        if isinstance(raw_line, bytes):
            try:
                line = raw_line.decode("utf-8")
            except UnicodeDecodeError:
                considered += 1
                rejected.append((line_no, "not UTF-8"))
                continue
        else:
            line = raw_line
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        considered += 1
        try:
            event = TweetEvent.from_record(json.loads(line))
        except json.JSONDecodeError as exc:
            rejected.append((line_no, f"not JSON: {exc.msg}"))
            continue
        except EventFormatError as exc:
            rejected.append((line_no, str(exc)))
            continue
        if event.tweet_id in seen_ids:
            rejected.append((line_no, f"duplicate tweet_id {event.tweet_id}"))
            continue
        seen_ids.add(event.tweet_id)
        events.append(event)

    if considered and len(rejected) / considered > MAX_MALFORMED_SHARE:
        raise EventLogError(
            f"{len(rejected)} of {considered} records are malformed; is this an event log?"
        )
    if rejected:
        logger.warning(
            "Malformed event records skipped",
            extra={"event": "events_rejected", "rejected": len(rejected)},
        )
    logger.info(
        "Event log parsed",
        extra={"event": "events_parsed", "accepted": len(events), "rejected": len(rejected)},
    )
    return EventBatch(events=tuple(events), rejected=rejected)


def read_events(path: Union[Path, str]) -> EventBatch:
    with Path(path).open("rb") as handle:
        return parse_events(handle)


def write_events(events: Iterable[TweetEvent], handle: io.TextIOBase) -> int:
    count = 0
    for event in events:
        handle.write(serialize_event(event) + "\n")
        count += 1
    return count


def tokenize(text: str) -> List[str]:
    """Case-folded word tokens, URLs removed; a hashtag yields its bare word."""
    return TOKEN_PATTERN.findall(URL_PATTERN.sub(" ", text).casefold())


def _contains_keyword(tokens: Sequence[str], keywords: Iterable[Tuple[str, ...]]) -> bool:
    token_set = set(tokens)
    for phrase in keywords:
        if len(phrase) == 1:
            if phrase[0] in token_set:
                return True
            continue
        width = len(phrase)
        if phrase[0] in token_set and any(
            tuple(tokens[i : i + width]) == phrase for i in range(len(tokens) - width + 1)
        ):
            return True
    return False


def filter_keywords(
    events: Iterable[TweetEvent],
    keyword_set: KeywordSet,
    reference_lang: str = DEFAULT_REFERENCE_LANG,
) -> List[TweetEvent]:
    """Keep events mentioning a keyword of their language or of ``reference_lang``."""
    reference = keyword_set.for_language(reference_lang)
    kept = []
    for event in events:
        keywords = keyword_set.for_language(event.lang) | reference
        if keywords and _contains_keyword(tokenize(event.text), keywords):
            kept.append(event)
    return kept


def slice_period(events: Iterable[TweetEvent], period: Period) -> List[TweetEvent]:
    return [event for event in events if event.timestamp in period]


def dominant_language(
    events: Iterable[TweetEvent],
    country: str,
    user_geo,
    spoken_langs: Iterable[str],
) -> str:
    """Most frequent spoken language among events of users geolocated in ``country``."""
    spoken = set(spoken_langs)
    counts: Counter = Counter()
    any_event = False
    for event in events:
        if user_geo.country_of(event.user_id) != country:
            continue
        any_event = True
        if event.lang in spoken:
            counts[event.lang] += 1
    if not any_event:
        raise LanguageError(f"No events authored by users in {country}")
    if not counts:
        raise LanguageError(f"No spoken language of {country} appears in the data")
    return min(counts, key=lambda lang: (-counts[lang], lang))


def daily_volume(events: Iterable[TweetEvent]) -> Dict[date, int]:
    counts: Counter = Counter(event.timestamp.date() for event in events)
    return dict(sorted(counts.items()))


def language_volume(events: Iterable[TweetEvent], user_geo) -> Dict[Tuple[str, str], int]:
    counts: Counter = Counter()
    for event in events:
        country = user_geo.country_of(event.user_id)
        if country is not None:
            counts[(country, event.lang)] += 1
    return dict(sorted(counts.items()))


def load_keywords(path: Union[Path, str]) -> KeywordSet:
    lists: Dict[str, List[str]] = {}
    with Path(path).open(encoding="utf-8") as handle:
        for line in handle:
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            lang, _, keyword = line.partition("\t")
            if keyword.strip():
                lists.setdefault(lang.strip(), []).append(keyword.strip())
    return KeywordSet.from_lists(lists)


def load_periods(path: Union[Path, str]) -> List[Period]:
    periods = []
    with Path(path).open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ValueError(f"{path}:{line_no}: expected name<TAB>start<TAB>end")
            name, start, end = (value.strip() for value in fields)
            periods.append(Period(name, parse_timestamp(start), parse_timestamp(end)))
    return periods


def load_spoken_languages(path: Union[Path, str]) -> Dict[str, FrozenSet[str]]:
    spoken = {}
    with Path(path).open(encoding="utf-8") as handle:
        for line in handle:
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            country, _, langs = line.partition("\t")
            spoken[country.strip()] = frozenset(
                lang.strip() for lang in langs.split(",") if lang.strip()
            )
    return spoken
