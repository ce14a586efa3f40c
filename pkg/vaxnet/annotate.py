"""Two-round labelling samples, annotator agreement and community stance."""
import io
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from sklearn.metrics import cohen_kappa_score, confusion_matrix

from .cluster import Partition


logger = logging.getLogger(__name__)

DEFAULT_SAMPLE_SIZE = 20
DEFAULT_MIN_FRAC = 0.01
DEFAULT_TOP = 10
DEFAULT_EXCLUDE_TOP = 50
DEFAULT_STANCE_THRESHOLD = 10


class AnnotationError(ValueError):
    """Raised for malformed label data or degenerate agreement statistics."""


class Label(str, Enum):
    PRO_VAX = "pro-vax"
    NO_VAX = "no-vax"
    OTHER = "other"


class Stance(str, Enum):
    NO_VAX = "A"
    OTHER = "O"


THREE_CLASS = (Label.PRO_VAX, Label.NO_VAX, Label.OTHER)
TWO_CLASS = (Label.PRO_VAX, Label.NO_VAX)


@dataclass(frozen=True)
class LabelRecord:
    tweet_id: str
    community_id: int
    round: int
    annotator_id: str
    label: Label

    def __post_init__(self):
        if self.round not in (1, 2):
            raise AnnotationError(f"round must be 1 or 2, got {self.round!r}")
        try:
            object.__setattr__(self, "label", Label(self.label))
        except ValueError as exc:
            raise AnnotationError(f"unknown label {self.label!r}") from exc


@dataclass(frozen=True)
class StanceMap:
    stances: Mapping[int, Stance] = field(default_factory=dict)
    novax_counts: Mapping[int, int] = field(default_factory=dict)

    def stance(self, community_id: int) -> Stance:
        return self.stances.get(community_id, Stance.OTHER)

    def novax_communities(self) -> List[int]:
        return sorted(c for c, stance in self.stances.items() if stance is Stance.NO_VAX)


class Sample(NamedTuple):
    community_id: int
    tweet_id: str


def _eligible_communities(partition: Partition, min_frac: float) -> Dict[int, List[str]]:
    total = len(partition)
    return {
        community: members
        for community, members in partition.communities().items()
        if total and len(members) / total > min_frac
    }


def sample_round1(
    partition: Partition,
    events: Iterable,
    n: int = DEFAULT_SAMPLE_SIZE,
    min_frac: float = DEFAULT_MIN_FRAC,
    seed: int = 0,
) -> List[Sample]:
    """Uniformly sample ``n`` distinct tweets authored in each community above ``min_frac``."""
    if n < 1:
        raise AnnotationError("sample size must be at least 1")
    authored: Dict[str, set] = defaultdict(set)
    for event in events:
        authored[event.user_id].add(event.tweet_id)

    samples: List[Sample] = []
    for community, members in _eligible_communities(partition, min_frac).items():
        tweets = sorted(tweet for member in members for tweet in authored.get(member, ()))
        if len(tweets) > n:
            rng = np.random.default_rng([seed, community])
            chosen = rng.choice(len(tweets), size=n, replace=False)
            tweets = sorted(tweets[i] for i in chosen)
        samples.extend(Sample(community, tweet) for tweet in tweets)
    logger.info(
        "Round-1 sample drawn",
        extra={"event": "sample_round1", "tweets": len(samples)},
    )
    return samples


def label_counts(records: Iterable[LabelRecord], round: Optional[int] = None) -> Dict[int, Counter]:
    counts: Dict[int, Counter] = defaultdict(Counter)
    for record in records:
        if round is None or record.round == round:
            counts[record.community_id][record.label] += 1
    return dict(counts)


def _novax_plurality(counts: Mapping) -> bool:
    novax = counts.get(Label.NO_VAX, 0)
    return novax > 0 and all(
        novax > counts.get(label, 0) for label in THREE_CLASS if label is not Label.NO_VAX
    )


def tweet_popularity(events: Iterable) -> Tuple[Counter, Dict[str, str]]:
    """Retweet counts per original tweet and the author of every known tweet."""
    popularity: Counter = Counter()
    authors: Dict[str, str] = {}
    for event in events:
        if event.is_retweet:
            popularity[event.retweeted_tweet_id] += 1
            authors.setdefault(event.retweeted_tweet_id, event.retweeted_user_id)
        else:
            authors[event.tweet_id] = event.user_id
    return popularity, authors


def sample_round2(
    partition: Partition,
    events: Iterable,
    round1_counts: Mapping[int, Mapping],
    top: int = DEFAULT_TOP,
    exclude_top: int = DEFAULT_EXCLUDE_TOP,
) -> List[Sample]:
    """Most retweeted tweets of no-vax-plurality communities, network-wide top tweets excluded."""
    popularity, authors = tweet_popularity(events)
    in_network = [
        tweet for tweet, author in authors.items() if partition.get(author) is not None
    ]
    ranked = sorted(in_network, key=lambda tweet: (-popularity[tweet], tweet))
    excluded = set(ranked[:exclude_top])

    eligible = {
        community for community, counts in round1_counts.items() if _novax_plurality(counts)
    }
    samples: List[Sample] = []
    for community in sorted(eligible):
        picks = [
            tweet
            for tweet in ranked
            if tweet not in excluded and partition.get(authors[tweet]) == community
        ][:top]
        samples.extend(Sample(community, tweet) for tweet in picks)
    logger.info(
        "Round-2 sample drawn",
        extra={"event": "sample_round2", "communities": len(eligible), "tweets": len(samples)},
    )
    return samples


def cohen_kappa(
    labels_a: Sequence,
    labels_b: Sequence,
    classes: Optional[Sequence] = None,
) -> float:
    """Cohen's kappa; with ``classes``, pairs using any other label are left out."""
    if len(labels_a) != len(labels_b):
        raise AnnotationError(
            f"label vectors differ in length ({len(labels_a)} vs {len(labels_b)})"
        )
    a = [_plain(label) for label in labels_a]
    b = [_plain(label) for label in labels_b]
    if classes is not None:
        allowed = [_plain(label) for label in classes]
        kept = [(x, y) for x, y in zip(a, b) if x in allowed and y in allowed]
        a = [x for x, _ in kept]
        b = [y for _, y in kept]
    else:
        allowed = sorted(set(a) | set(b))
    if not a:
        raise AnnotationError("no label pairs to compare")

    table = confusion_matrix(a, b, labels=allowed).astype(np.float64)
    total = table.sum()
    expected = float(np.dot(table.sum(axis=1), table.sum(axis=0))) / (total * total)
    if expected >= 1.0:
        raise AnnotationError("kappa is undefined when chance agreement is 1")
    return float(cohen_kappa_score(a, b, labels=allowed))


def _plain(label) -> str:
    return label.value if isinstance(label, Enum) else str(label)


@dataclass(frozen=True)
class AgreementReport:
    kappa: Optional[float]
    disagreement: Optional[float]
    items: int


def annotator_agreement(
    records: Iterable[LabelRecord],
    classes: Sequence = THREE_CLASS,
) -> AgreementReport:
    """Agreement over tweets labelled by two or more annotators (first two by id)."""
    by_tweet: Dict[Tuple[int, str, int], Dict[str, Label]] = defaultdict(dict)
    for record in records:
        by_tweet[(record.round, record.tweet_id, record.community_id)][record.annotator_id] = record.label
    allowed = {_plain(label) for label in classes}
    first, second = [], []
    for key in sorted(by_tweet):
        labels = by_tweet[key]
        if len(labels) < 2:
            continue
        annotator_a, annotator_b = sorted(labels)[:2]
        x, y = _plain(labels[annotator_a]), _plain(labels[annotator_b])
        if x in allowed and y in allowed:
            first.append(x)
            second.append(y)
    if not first:
        return AgreementReport(kappa=None, disagreement=None, items=0)
    disagreement = sum(x != y for x, y in zip(first, second)) / len(first)
    try:
        kappa: Optional[float] = cohen_kappa(first, second, classes=classes)
    except AnnotationError:
        kappa = None
    return AgreementReport(kappa=kappa, disagreement=disagreement, items=len(first))


def classify_communities(
    records: Iterable[LabelRecord],
    threshold: int = DEFAULT_STANCE_THRESHOLD,
) -> StanceMap:
    """A community is no-vax when its no-vax label records exceed ``threshold``."""
    counts: Dict[int, int] = {}
    for record in records:
        counts.setdefault(record.community_id, 0)
        if record.label is Label.NO_VAX:
            counts[record.community_id] += 1
    stances = {
        community: Stance.NO_VAX if count > threshold else Stance.OTHER
        for community, count in sorted(counts.items())
    }
    return StanceMap(stances=stances, novax_counts=dict(sorted(counts.items())))


def novax_label_share(records: Iterable[LabelRecord], round: Optional[int] = 1) -> Optional[float]:
    labels = [record.label for record in records if round is None or record.round == round]
    if not labels:
        return None
    return sum(label is Label.NO_VAX for label in labels) / len(labels)


def write_samples(
    samples: Iterable[Sample],
    texts: Mapping[str, str],
    handle: io.TextIOBase,
    comment: Optional[str] = None,
) -> None:
    if comment:
        handle.write(f"# {comment}\n")
    for sample in samples:
        text = " ".join(texts.get(sample.tweet_id, "").split())
        handle.write(f"{sample.community_id}\t{sample.tweet_id}\t{text}\n")


def read_samples(lines: Iterable[str]) -> List[Sample]:
    samples = []
    for line in lines:
        line = line.rstrip("\n")
        if not line.strip() or line.startswith("#"):
            continue
        community, tweet, _ = (line.split("\t", 2) + [""])[:3]
        samples.append(Sample(int(community), tweet))
    return samples


def read_labels(lines: Iterable[str]) -> List[LabelRecord]:
    records = []
    for line_no, line in enumerate(lines, start=1):
        line = line.rstrip("\n")
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 5:
            raise AnnotationError(
                f"line {line_no}: expected tweet_id<TAB>community_id<TAB>round<TAB>annotator_id<TAB>label"
            )
        tweet, community, round_, annotator, label = fields
        try:
            records.append(LabelRecord(tweet, int(community), int(round_), annotator, label))
        except ValueError as exc:
            raise AnnotationError(f"line {line_no}: {exc}") from exc
    return records


def write_labels(records: Iterable[LabelRecord], handle: io.TextIOBase) -> None:
    for record in records:
        handle.write(
            f"{record.tweet_id}\t{record.community_id}\t{record.round}\t"
            f"{record.annotator_id}\t{record.label.value}\n"
        )
