"""
Chart builders for the Refign dashboard

Pure functions turning metrics logs and reports into plotly figures:
- Trust score over training (rolling mean)
- Pseudo-label diversity over training, per branch
- Target mIoU at the evaluation iterations
- Bar charts for ablation and gamma-sweep reports
"""

import logging

import pandas as pd
import plotly.graph_objects as go

logger = logging.getLogger(__name__)

REQUIRED_LOG_COLUMNS = ["iteration", "branch", "trust", "diversity", "target_miou"]


def validate_metrics_log(df: pd.DataFrame) -> dict:
    """
    Check that a DataFrame looks like a training metrics log

    Returns:
    --------
    Dict
        Validation result with status and message
    """
    missing = [c for c in REQUIRED_LOG_COLUMNS if c not in df.columns]
    if missing:
        return {"valid": False, "message": f"Missing columns: {', '.join(missing)}"}
    if df.empty:
        return {"valid": False, "message": "Metrics log is empty"}
    return {"valid": True, "message": f"Loaded {len(df)} iterations"}


def trust_figure(df: pd.DataFrame, window: int = 50) -> go.Figure:
    """Trust score per target-branch iteration with a rolling mean"""
    target = df[df["trust"].notna()]
    fig = go.Figure()
    fig.add_trace(go.Scatter(x=target["iteration"], y=target["trust"], mode="markers",
                             name="trust", marker={"size": 3, "opacity": 0.4}))
    fig.add_trace(go.Scatter(x=target["iteration"], y=target["trust"].rolling(window, min_periods=1).mean(),
                             mode="lines", name=f"rolling mean ({window})"))
    fig.update_layout(title="Trust score", xaxis_title="iteration", yaxis_title="s", yaxis_range=[0, 1])
    return fig


def diversity_figure(df: pd.DataFrame, window: int = 50) -> go.Figure:
    """Rolling pseudo-label diversity, one line per branch"""
    fig = go.Figure()
    for branch, group in df.groupby("branch"):
        fig.add_trace(go.Scatter(x=group["iteration"], y=group["diversity"].rolling(window, min_periods=1).mean(),
                                 mode="lines", name=str(branch)))
    fig.update_layout(title="Pseudo-label diversity", xaxis_title="iteration", yaxis_title="diversity index")
    return fig


def miou_figure(df: pd.DataFrame) -> go.Figure:
    evaluated = df[df["target_miou"].notna()]
    fig = go.Figure(go.Scatter(x=evaluated["iteration"], y=evaluated["target_miou"], mode="lines+markers",
                               name="target mIoU"))
    fig.update_layout(title="Target mIoU", xaxis_title="iteration", yaxis_title="mIoU")
    return fig


def report_figure(report: pd.DataFrame, value: str = "target_miou") -> go.Figure:
    """Bar chart of one column of an ablation or gamma-sweep report"""
    if value not in report.columns:
        logger.warning(f"Report has no column '{value}'")
        return go.Figure()
    fig = go.Figure(go.Bar(x=report["label"], y=report[value]))
    fig.update_layout(title=value.replace("_", " "), xaxis_title="configuration")
    return fig
