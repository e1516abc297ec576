"""
Refign - Reference-guided pseudo-label refinement toolkit
----------------------------------------------------------
Command-line entry point.

    python main.py selftrain --config run.cfg --seed 0 --out-dir runs/seed0
    python main.py refine --q-t q_t.rftn --q-r q_r.rftn --flow flow.rftn --taxonomy tax.cfg --out-dir out
    python main.py eval --metric miou --pred labels.rftn --gt gt.rftn

The metrics dashboard is a separate Streamlit app: streamlit run dashboard.py
"""

import logging
import sys

from config.config import LOG_CONFIG
from tools.cli import main

# ===== Logging =====
logging.basicConfig(level=LOG_CONFIG["level"], format=LOG_CONFIG["format"])

if __name__ == "__main__":
    sys.exit(main())
