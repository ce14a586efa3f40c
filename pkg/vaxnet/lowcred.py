"""Low-credibility domain lists and URL statistics."""
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union
from urllib.parse import urlsplit


logger = logging.getLogger(__name__)

YOUTUBE_DOMAINS = frozenset({"youtube.com", "youtu.be"})

COVERED = "covered"
UNCOVERED = "uncovered"
UNKNOWN = "unknown"


class DomainError(ValueError):
    """Raised when a URL or list entry has no usable host."""


@dataclass(frozen=True)
class DomainList:
    domains: FrozenSet[str]
    sources: Mapping[str, FrozenSet[str]] = field(default_factory=dict)

    def __post_init__(self):
        for domain in self.domains:
            if domain != domain.lower() or "/" in domain or ":" in domain:
                raise DomainError(f"Domain list entry is not normalized: {domain!r}")
            if domain.startswith("www."):
                raise DomainError(f"Domain list entry keeps its www prefix: {domain!r}")

    def __len__(self) -> int:
        return len(self.domains)

    def __contains__(self, domain: str) -> bool:
        return is_lowcred(domain, self)


def _split_host(url: str):
    text = url.strip()
    if not text or any(ch.isspace() for ch in text):
        raise DomainError(f"URL has no host: {url!r}")
    if "://" not in text and not text.startswith("//"):
        text = "//" + text
    try:
        parts = urlsplit(text)
        host = parts.hostname
    except ValueError as exc:
        raise DomainError(f"URL has no host: {url!r}") from exc
    if not host or "." not in host.strip("."):
        raise DomainError(f"URL has no host: {url!r}")
    return host.lower().rstrip("."), parts


def extract_domain(url: str) -> str:
    """Return the lowercase host of ``url`` without port and one leading ``www.``."""
    host, _ = _split_host(url)
    if host.startswith("www."):
        host = host[4:]
    return host


def normalize_url(url: str) -> str:
    """Identity of a URL for co-sharing: host, path and query, no scheme or fragment."""
    host, parts = _split_host(url)
    if host.startswith("www."):
        host = host[4:]
    path = parts.path
    if path == "/":
        path = ""
    normalized = host + path
    if parts.query:
        normalized += "?" + parts.query
    return normalized


def is_lowcred(domain: str, domain_list: DomainList) -> bool:
    """Match ``domain`` or any parent domain on a dot boundary."""
    labels = domain.split(".")
    return any(".".join(labels[i:]) in domain_list.domains for i in range(len(labels)))


def is_youtube(domain: str) -> bool:
    labels = domain.split(".")
    return any(".".join(labels[i:]) in YOUTUBE_DOMAINS for i in range(len(labels)))


def resolve_url(url: str, shorteners: Optional[Mapping[str, str]] = None) -> str:
    if not shorteners:
        return url
    return shorteners.get(url, url)


def lowcred_fraction(
    events: Iterable,
    domain_list: DomainList,
    shorteners: Optional[Mapping[str, str]] = None,
) -> Optional[float]:
    """Share of URL occurrences pointing to listed domains; ``None`` when no URL is usable."""
    hits = 0
    total = 0
    for event in events:
        for url in event.urls:
            try:
                domain = extract_domain(resolve_url(url, shorteners))
            except DomainError:
                continue
            total += 1
            if is_lowcred(domain, domain_list):
                hits += 1
    if total == 0:
        return None
    return hits / total


def top_domains(
    events: Iterable,
    domain_list: DomainList,
    n: int = 10,
    shorteners: Optional[Mapping[str, str]] = None,
) -> List[Tuple[str, int]]:
    counts: Counter = Counter()
    for event in events:
        for url in event.urls:
            try:
                domain = extract_domain(resolve_url(url, shorteners))
            except DomainError:
                continue
            if is_lowcred(domain, domain_list):
                counts[domain] += 1
    return sorted(counts.items(), key=lambda item: (-item[1], item[0]))[:n]


def language_coverage(lang: str, covered_languages: Iterable[str]) -> str:
    """Whether low-credibility figures for ``lang`` can be trusted to be nonzero."""
    covered = set(covered_languages)
    if not covered:
        return UNKNOWN
    return COVERED if lang in covered else UNCOVERED


def load_domain_list(paths: Union[Path, str, Sequence[Union[Path, str]]]) -> DomainList:
    """Merge one or more ``domain[<TAB>source]`` files, ``#`` starting a comment."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    sources: Dict[str, set] = {}
    for path in paths:
        path = Path(path)
        with path.open(encoding="utf-8") as handle:
            for line_no, line in enumerate(handle, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                entry, _, source = line.partition("\t")
                try:
                    domain = extract_domain(entry.strip())
                except DomainError:
                    logger.warning(
                        "Skipping unusable domain list entry",
                        extra={"event": "domain_entry_skipped", "path": str(path), "line": line_no},
                    )
                    continue
                tags = sources.setdefault(domain, set())
                tags.add(source.strip() or path.stem)
    domain_list = DomainList(
        domains=frozenset(sources),
        sources={domain: frozenset(tags) for domain, tags in sources.items()},
    )
    logger.info(
        "Low-credibility domain list loaded",
        extra={"event": "domain_list_loaded", "domains": len(domain_list)},
    )
    return domain_list


def load_shorteners(path: Union[Path, str]) -> Dict[str, str]:
    mapping = {}
    with Path(path).open(encoding="utf-8") as handle:
        for line in handle:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            short, _, resolved = line.partition("\t")
            if resolved:
                mapping[short.strip()] = resolved.strip()
    return mapping
