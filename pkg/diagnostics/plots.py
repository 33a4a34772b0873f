import logging
from collections.abc import Sequence
from pathlib import Path

logger = logging.getLogger(__name__)


def scatter_svg(cot_scores: Sequence[float], errors: Sequence[float], path: Path, title: str = "") -> None:
    """CoT score against decision error as a self-contained SVG; same input gives same bytes."""
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams.update({
        "svg.fonttype": "none",
        "svg.hashsalt": "misalignment",
        "font.size": 9,
    })
    import matplotlib.pyplot as plt

    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    ax.scatter(errors, cot_scores, s=12, alpha=0.7, color="tab:blue", edgecolors="none")
    ax.set_xlabel("decision error (avg L2, m)")
    ax.set_ylabel("CoT score (mean log-prob)")
    if title:
        ax.set_title(title)
    ax.grid(True, linestyle=":", alpha=0.6)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    logger.debug("Scatter plot (%d points) -> %s", len(errors), path)
