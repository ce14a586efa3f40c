"""Behaviour and account-suspension statistics per stance cohort."""
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Union

from .annotate import StanceMap
from .cluster import Partition
from .lowcred import DomainError, DomainList, extract_domain, is_youtube, lowcred_fraction, resolve_url


logger = logging.getLogger(__name__)

ALL_USERS = "all"


class AccountStatus(str, Enum):
    ACTIVE = "active"
    SUSPENDED = "suspended"
    DELETED = "deleted"


@dataclass(frozen=True)
class StatusSnapshot:
    statuses: Mapping[str, AccountStatus] = field(default_factory=dict)
    last_tweet: Mapping[str, date] = field(default_factory=dict)

    def status_of(self, user_id: str) -> AccountStatus:
        return self.statuses.get(user_id, AccountStatus.ACTIVE)

    def __contains__(self, user_id: str) -> bool:
        return user_id in self.statuses


@dataclass(frozen=True)
class CohortStats:
    country: str
    period: str
    cohort: str
    n_users: int
    avg_retweets: float
    avg_urls: float
    avg_youtube_urls: float
    lowcred_fraction: Optional[float]


@dataclass(frozen=True)
class SuspensionRow:
    country: str
    period: str
    cohort: str
    n_users: int
    suspended: int

    @property
    def proportion(self) -> float:
        return self.suspended / self.n_users


@dataclass
class SuspensionReport:
    rows: List[SuspensionRow] = field(default_factory=list)
    daily: Dict[str, Dict[date, int]] = field(default_factory=dict)


def _cohort_of(partition: Partition, stance_map: Optional[StanceMap]) -> Dict[str, str]:
    if stance_map is None:
        return {user: ALL_USERS for user in partition.assignment}
    return {
        user: stance_map.stance(community).value
        for user, community in partition.assignment.items()
    }


def cohort_behavior(
    events: Iterable,
    partition: Partition,
    stance_map: Optional[StanceMap] = None,
    domain_list: Optional[DomainList] = None,
    country: str = "",
    period: str = "",
    shorteners: Optional[Mapping[str, str]] = None,
) -> List[CohortStats]:
    """Per-user averages of retweets, URL shares and YouTube shares in each stance cohort."""
    cohort_of = _cohort_of(partition, stance_map)
    members: Dict[str, int] = defaultdict(int)
    for cohort in cohort_of.values():
        members[cohort] += 1

    retweets: Dict[str, int] = defaultdict(int)
    urls: Dict[str, int] = defaultdict(int)
    youtube: Dict[str, int] = defaultdict(int)
    authored: Dict[str, list] = defaultdict(list)
    for event in events:
        cohort = cohort_of.get(event.user_id)
        if cohort is None:
            continue
        authored[cohort].append(event)
        if event.is_retweet:
            retweets[cohort] += 1
        for url in event.urls:
            urls[cohort] += 1
            try:
                domain = extract_domain(resolve_url(url, shorteners))
            except DomainError:
                continue
            if is_youtube(domain):
                youtube[cohort] += 1

    stats = []
    for cohort in sorted(members):
        n = members[cohort]
        stats.append(
            CohortStats(
                country=country,
                period=period,
                cohort=cohort,
                n_users=n,
                avg_retweets=retweets[cohort] / n,
                avg_urls=urls[cohort] / n,
                avg_youtube_urls=youtube[cohort] / n,
                lowcred_fraction=(
                    lowcred_fraction(authored[cohort], domain_list, shorteners)
                    if domain_list is not None
                    else None
                ),
            )
        )
    return stats


def last_tweet_dates(events: Iterable) -> Dict[str, date]:
    """Date of each user's latest event across the whole corpus."""
    latest: Dict[str, date] = {}
    for event in events:
        day = event.timestamp.date()
        if event.user_id not in latest or day > latest[event.user_id]:
            latest[event.user_id] = day
    return latest


def suspension_stats(
    partition: Partition,
    stance_map: Optional[StanceMap],
    status: StatusSnapshot,
    events: Iterable = (),
    country: str = "",
    period: str = "",
) -> SuspensionReport:
    """Suspended share per cohort and suspended users per last-tweet date."""
    cohort_of = _cohort_of(partition, stance_map)
    missing = sum(1 for user in cohort_of if user not in status)
    if missing:
        logger.warning(
            "Status snapshot does not cover every user; missing users count as active",
            extra={
                "event": "status_coverage_incomplete",
                "country": country,
                "period": period,
                "missing": missing,
                "users": len(cohort_of),
            },
        )

    last_seen = last_tweet_dates(events)
    last_seen.update(status.last_tweet)
    totals: Dict[str, int] = defaultdict(int)
    suspended: Dict[str, int] = defaultdict(int)
    daily: Dict[date, int] = defaultdict(int)
    for user in sorted(cohort_of):
        cohort = cohort_of[user]
        totals[cohort] += 1
        if status.status_of(user) is AccountStatus.SUSPENDED:
            suspended[cohort] += 1
            if user in last_seen:
                daily[last_seen[user]] += 1

    rows = [
        SuspensionRow(country, period, cohort, totals[cohort], suspended[cohort])
        for cohort in sorted(totals)
    ]
    return SuspensionReport(rows=rows, daily={country: dict(sorted(daily.items()))})


def load_status(path: Union[Path, str]) -> StatusSnapshot:
    """Read ``user_id<TAB>status[<TAB>YYYY-MM-DD]`` lines."""
    statuses: Dict[str, AccountStatus] = {}
    last_tweet: Dict[str, date] = {}
    with Path(path).open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) not in (2, 3):
                raise ValueError(f"{path}:{line_no}: expected user_id<TAB>status[<TAB>date]")
            try:
                statuses[fields[0]] = AccountStatus(fields[1].strip())
                if len(fields) == 3 and fields[2].strip():
                    last_tweet[fields[0]] = date.fromisoformat(fields[2].strip())
            except ValueError as exc:
                raise ValueError(f"{path}:{line_no}: {exc}") from exc
    logger.info(
        "Account status snapshot loaded",
        extra={"event": "status_loaded", "users": len(statuses)},
    )
    return StatusSnapshot(statuses=statuses, last_tweet=last_tweet)
