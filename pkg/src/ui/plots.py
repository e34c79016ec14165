"""
Loss-curve rendering for training runs.
"""
from pathlib import Path
from typing import Sequence, Union

from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from src.ai.trainer import LossRecord, trace_to_frame


def loss_curve_figure(trace: Sequence[LossRecord]) -> Figure:
    """Per-step loss with the per-epoch mean drawn over it."""
    figure = Figure(figsize=(7, 4))
    ax = figure.add_subplot(111)

    if not trace:
        ax.text(0.5, 0.5, 'No training steps', ha='center', va='center', transform=ax.transAxes)
        return figure

    df = trace_to_frame(trace)
    ax.plot(df['step'], df['loss'], color='#9aa5b1', linewidth=0.8, label='step loss')

    per_epoch = df.groupby('epoch').agg(step=('step', 'max'), loss=('loss', 'mean'))
    ax.plot(per_epoch['step'], per_epoch['loss'], color='#1f4e79', linewidth=2.0,
            marker='o', markersize=3, label='epoch mean')

    if (df['loss'] > 0).all():
        ax.set_yscale('log')
    ax.set_xlabel('step')
    ax.set_ylabel('squared error')
    ax.set_title('Training loss')
    ax.legend(loc='upper right', fontsize=9)
    ax.grid(True, alpha=0.3)
    figure.tight_layout()
    return figure


def plot_loss_trace(trace: Sequence[LossRecord], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    figure = loss_curve_figure(trace)
    FigureCanvasAgg(figure).print_png(str(path))
    return path
