"""
Configuration settings for the Refign toolkit

This module contains the default settings for every component. Library
dataclasses read their defaults from these dicts, and run configuration
files override them key by key.
"""

# Import required modules
import logging
import os
from pathlib import Path

logger = logging.getLogger(__name__)

# Try to load environment variables from .env file
try:
    from dotenv import load_dotenv
    load_dotenv(dotenv_path=os.path.join(os.path.dirname(os.path.dirname(__file__)), '.env'))
    logger.debug("Loaded .env file")
except ImportError:
    # dotenv not installed, continue with system environment variables
    logger.debug("python-dotenv not installed, continuing with system environment variables")
except Exception as e:
    logger.warning(f"Error loading .env file: {e}")

# Paths and directories
BASE_DIR = Path(__file__).parent.parent
OUTPUT_DIR = Path(os.environ.get("REFIGN_OUTPUT_DIR", str(BASE_DIR / "runs")))

# Logging
LOG_CONFIG = {
    "level": os.environ.get("REFIGN_LOG_LEVEL", "INFO"),
    "format": "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
}

# Warp-consistency losses (Huber delta and lambda are not given by the method, see DESIGN.md)
LOSS_CONFIG = {
    "lambda_weight": 1.0,
    "huber_delta": 1.0,  # pixels
    "alpha1": 0.03,
    "alpha2": 0.05,
}

# Log-variance clamp for Gaussian flows
LOG_VARIANCE_RANGE = (-10.0, 10.0)

# Pseudo-label refinement
REFINE_CONFIG = {
    "gamma": 0.25,
    "enable_mask_m": True,
    "enable_trust": True,
    "fixed_alpha": None,
    "fixed_confidence": None,
}

# Self-training loop
TRAIN_CONFIG = {
    "iterations": 2000,
    "learning_rate": 0.5,
    "ema_momentum": 0.99,
    "rng_seed": 0,
    "reference_adaptation": True,
    "pseudo_threshold": None,
    "eval_interval": 100,
}

# Alignment providers
ALIGNMENT_CONFIG = {
    "mode": "oracle",          # oracle | fitted | identity
    "flow_noise": 0.5,         # pixels, base std of the injected flow noise
    "noise_spread": 4.0,       # per-pixel std drawn in [noise/spread, noise*spread]
    "radius": 1.0,             # r of the confidence map
    "confidence_from": "direct",  # direct | cycle
    "fit_observations": 8,
    "fit_steps": 200,
    "fit_learning_rate": 0.5,
}

# Synthetic scenes
SCENE_CONFIG = {
    "height": 64,
    "width": 64,
    "class_count": 6,
    "num_buildings": 3,
    "num_poles": 3,
    "num_dynamic": 4,
    "corruption": 0.6,
    "homography_strength": 0.1,
    "dynamic_shift": 6.0,  # pixels
    "pool_size": 8,
}

# Class roles for the default 6-class scene: sky, road, building | pole | car, person
DEFAULT_TAXONOMY = {
    "class_count": 6,
    "large_static": [0, 1, 2],
    "small_static": [3],
    "dynamic": [4, 5],
}

# Clean-domain class colours (RGB in [0, 1]); cycled when there are more classes
PALETTE = [
    (0.55, 0.75, 0.95),
    (0.40, 0.40, 0.42),
    (0.80, 0.50, 0.30),
    (0.95, 0.90, 0.20),
    (0.85, 0.10, 0.15),
    (0.20, 0.80, 0.35),
    (0.60, 0.30, 0.80),
    (0.10, 0.55, 0.55),
]

# Tensor container format
CONTAINER_CONFIG = {
    "magic": b"RFTN",
    "version": 1,
    "alignment": 16,
}

# Sentinel for ignored pixels in label maps
IGNORE_INDEX = 255

# Sweep defaults
GAMMA_SWEEP = [1.0, 0.5, 0.25, 0.125, 0.0625]
AUSE_FRACTIONS = [round(0.05 * i, 2) for i in range(20)]
