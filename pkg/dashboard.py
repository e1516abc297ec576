"""
Refign - Training Dashboard
---------------------------
Read-only Streamlit viewer for self-training outputs.

Loads a metrics CSV (and optionally ablation / gamma-sweep reports) from a
run directory and plots the trust score, pseudo-label diversity and target
mIoU. It launches no computation.

    streamlit run dashboard.py
"""

import logging
from pathlib import Path

import pandas as pd
import streamlit as st

from config.config import LOG_CONFIG, OUTPUT_DIR
from ui_components.charts import (
    diversity_figure,
    miou_figure,
    report_figure,
    trust_figure,
    validate_metrics_log,
)

logging.basicConfig(level=LOG_CONFIG["level"], format=LOG_CONFIG["format"])
logger = logging.getLogger(__name__)

# ===== Page Configuration =====
st.set_page_config(page_title="Refign - Training Dashboard", layout="wide")
st.title("Refign training dashboard")

with st.sidebar:
    st.subheader("Run")
    run_dir = Path(st.text_input("Run directory", value=str(OUTPUT_DIR)))
    window = st.slider("Rolling window", min_value=1, max_value=500, value=50)


def load_csv(path: Path):
    try:
        return pd.read_csv(path)
    except FileNotFoundError:
        return None
    except Exception as e:
        logger.warning(f"Could not read {path}: {e}")
        st.warning(f"Could not read {path.name}: {e}")
        return None


metrics = load_csv(run_dir / "metrics.csv")
if metrics is None:
    st.info(f"No metrics.csv in {run_dir}")
else:
    check = validate_metrics_log(metrics)
    if not check["valid"]:
        st.error(check["message"])
    else:
        st.caption(check["message"])
        col1, col2 = st.columns(2)
        with col1:
            st.plotly_chart(trust_figure(metrics, window), use_container_width=True)
        with col2:
            st.plotly_chart(diversity_figure(metrics, window), use_container_width=True)
        st.plotly_chart(miou_figure(metrics), use_container_width=True)

for name, title in (("ablation.csv", "Ablation"), ("gamma_sweep.csv", "Gamma sweep")):
    report = load_csv(run_dir / name)
    if report is not None:
        st.subheader(title)
        st.dataframe(report, use_container_width=True)
        st.plotly_chart(report_figure(report), use_container_width=True)
