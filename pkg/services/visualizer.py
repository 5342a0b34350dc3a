import logging
from pathlib import Path
from typing import Sequence, Union

import numpy as np
import pandas as pd
import plotly.graph_objects as go
from plotly.colors import hex_to_rgb, qualitative, sample_colorscale, unlabel_rgb
from plotly.subplots import make_subplots

from services.ensemble import SweepResult
from services.skeleton import SkeletonImage
from services.training import TrainingHistory
from utils.errors import DataIOError, ShapeError

logger = logging.getLogger("visualizer")

TINT = np.array([255, 0, 0], dtype=np.float64)
TINT_ALPHA = 0.5


def _as_rgb(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim == 2:
        image = np.repeat(image[:, :, None], 3, axis=2)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"Cannot render an overlay on an image of shape {image.shape}")
    if image.dtype != np.uint8:
        image = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    return image


class CrackVisualizer:
    def __init__(self, radius_colorscale: str = "Viridis"):
        self.radius_colorscale = radius_colorscale
        lut = sample_colorscale(radius_colorscale, list(np.linspace(0.0, 1.0, 256)))
        self.radius_lut = np.array([unlabel_rgb(color) for color in lut], dtype=np.float64)
        self.label_palette = np.array([hex_to_rgb(color) for color in qualitative.Plotly], dtype=np.uint8)

    def create_prediction_overlay(self, image: np.ndarray, mask: np.ndarray) -> np.ndarray:
        """Crack pixels tinted red at 50% over the source image"""
        rgb = _as_rgb(image).astype(np.float64)
        mask = np.asarray(mask, dtype=bool)
        if rgb.shape[:2] != mask.shape:
            raise ShapeError(f"Mask {mask.shape} does not match image {rgb.shape[:2]}")
        rgb[mask] = (1.0 - TINT_ALPHA) * rgb[mask] + TINT_ALPHA * TINT
        return np.round(rgb).astype(np.uint8)

    def create_skeleton_overlay(self, image: np.ndarray, skeleton: SkeletonImage) -> np.ndarray:
        """Skeleton pixels colored by their radius"""
        rgb = _as_rgb(image).copy()
        on = skeleton.skeleton
        if not on.any():
            return rgb
        radius = skeleton.radius[on]
        top = radius.max()
        levels = np.zeros(radius.shape, dtype=int) if top <= 0 else np.round(radius / top * 255).astype(int)
        rgb[on] = np.round(self.radius_lut[levels]).astype(np.uint8)
        return rgb

    def create_label_overlay(self, labels: np.ndarray) -> np.ndarray:
        """One palette color per component on a black background"""
        rgb = np.zeros(labels.shape + (3,), dtype=np.uint8)
        on = labels > 0
        rgb[on] = self.label_palette[(labels[on] - 1) % len(self.label_palette)]
        return rgb

    def create_sweep_figure(self, result: SweepResult, title: str = None) -> go.Figure:
        """Precision, recall and F1 against member count, one line per threshold"""
        table = result.table
        fig = make_subplots(rows=1, cols=3, subplot_titles=("Precision", "Recall", "F1"), shared_yaxes=True)
        colors = qualitative.Plotly
        for i, (t, rows) in enumerate(table.groupby("t", sort=True)):
            rows = rows.sort_values("n")
            for col, metric in enumerate(("precision", "recall", "f1"), start=1):
                fig.add_trace(
                    go.Scatter(
                        x=rows["n"],
                        y=rows[metric],
                        mode="lines+markers",
                        name=f"t = {t:g}",
                        legendgroup=f"t{t:g}",
                        showlegend=col == 1,
                        line=dict(color=colors[i % len(colors)], width=2),
                    ),
                    row=1,
                    col=col,
                )
        best = result.best
        fig.update_layout(
            title=title or f"Ensemble sweep (best: n={best['n']:g}, t={best['t']:g}, F1={best['f1']:.4f})",
            hovermode="x unified",
            legend=dict(orientation="h", yanchor="bottom", y=1.08, xanchor="right", x=1),
        )
        fig.update_xaxes(title_text="Number of networks", tickvals=sorted(table["n"].unique()))
        return fig

    def create_loss_figure(self, histories: Sequence[TrainingHistory]) -> go.Figure:
        """Mean training loss per epoch for every member"""
        frame = pd.concat([h.to_frame() for h in histories], ignore_index=True)
        fig = go.Figure()
        for member, rows in frame.groupby("member", sort=True):
            fig.add_trace(go.Scatter(x=rows["epoch"], y=rows["loss"], mode="lines+markers", name=f"member {member}"))
        fig.update_layout(title="Training loss", xaxis_title="Epoch", yaxis_title="Loss", hovermode="x unified")
        return fig


def write_figure(fig: go.Figure, path: Union[str, Path]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.write_html(str(path), include_plotlyjs="cdn")
    except OSError as e:
        raise DataIOError(f"Cannot write figure {path}: {e}") from e
    return path
