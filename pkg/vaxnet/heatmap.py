"""SVG heatmaps of country flow matrices."""
import io
import logging
from dataclasses import dataclass
from typing import Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import Normalize, TwoSlopeNorm  # noqa: E402

from .flows import FlowKind, FlowMatrix, Orientation  # noqa: E402


logger = logging.getLogger(__name__)

# fixed salt so repeated renders of the same matrix are byte-identical
plt.rcParams["svg.hashsalt"] = "vaxnet"


@dataclass(frozen=True)
class HeatmapScheme:
    """Colour map and scaling for one kind of matrix."""

    cmap: str = "Reds"
    diverging: bool = False
    center: float = 1.0
    masked: str = "#bdbdbd"
    infinite: str = "#67000d"
    label: str = ""


SCHEMES = {
    FlowKind.RAW: HeatmapScheme(cmap="Blues", label="retweets"),
    FlowKind.NORMALIZED: HeatmapScheme(cmap="RdBu_r", diverging=True, label="normalized retweets"),
    FlowKind.DENSITY_RATIO: HeatmapScheme(cmap="RdBu_r", diverging=True, label="no-vax / other density"),
    FlowKind.LOWCRED_RATE: HeatmapScheme(cmap="Reds", label="low-credibility share"),
    FlowKind.LOWCRED_SHARE: HeatmapScheme(cmap="Reds", label="share of imported low-credibility URLs"),
}


def _norm(values: np.ndarray, scheme: HeatmapScheme) -> Normalize:
    finite = values[np.isfinite(values)]
    if not scheme.diverging:
        upper = float(finite.max()) if finite.size else 1.0
        return Normalize(vmin=0.0, vmax=upper if upper > 0 else 1.0)
    low = float(finite.min()) if finite.size else scheme.center / 2
    high = float(finite.max()) if finite.size else scheme.center * 2
    low = min(low, scheme.center - 1e-9)
    high = max(high, scheme.center + 1e-9)
    return TwoSlopeNorm(vcenter=scheme.center, vmin=low, vmax=high)


def render_heatmap(
    matrix: FlowMatrix,
    title: str = "",
    scheme: Optional[HeatmapScheme] = None,
) -> str:
    """Render the display orientation: rows retweeting, columns retweeted."""
    scheme = scheme or SCHEMES.get(matrix.kind, HeatmapScheme())
    shown = matrix.oriented(Orientation.IMPORTER_ROWS)
    values = shown.values
    n = len(shown.countries)

    cmap = plt.get_cmap(scheme.cmap).copy()
    cmap.set_bad(scheme.masked)
    finite = np.where(np.isfinite(values), values, np.nan)

    figure, axes = plt.subplots(figsize=(1.0 + 0.6 * max(n, 2), 0.8 + 0.6 * max(n, 2)))
    try:
        image = axes.imshow(np.ma.masked_invalid(finite), cmap=cmap, norm=_norm(values, scheme))
        infinite = np.argwhere(np.isinf(values))
        for i, j in infinite:
            axes.add_patch(
                plt.Rectangle((j - 0.5, i - 0.5), 1, 1, color=scheme.infinite, linewidth=0)
            )
            axes.text(j, i, "∞", ha="center", va="center", color="white", fontsize=8)
        axes.set_xticks(range(n))
        axes.set_yticks(range(n))
        axes.set_xticklabels(shown.countries, rotation=90)
        axes.set_yticklabels(shown.countries)
        axes.set_xlabel("retweeted country")
        axes.set_ylabel("retweeting country")
        if title:
            axes.set_title(title)
        colorbar = figure.colorbar(image, ax=axes)
        if scheme.label:
            colorbar.set_label(scheme.label)
        figure.tight_layout()
        buffer = io.StringIO()
        figure.savefig(buffer, format="svg", metadata={"Date": None})
    finally:
        plt.close(figure)
    logger.debug(
        "Heatmap rendered",
        extra={"event": "heatmap_rendered", "kind": matrix.kind.value, "countries": n},
    )
    return buffer.getvalue()
