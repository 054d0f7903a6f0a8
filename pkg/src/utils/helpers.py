"""
Helper utilities for the Shift Learning Lab.
"""
import os
import sys
import copy
import json
import hashlib
import logging
from pathlib import Path
from datetime import datetime

import numpy as np
import yaml

from .errors import ConfigurationError

logger = logging.getLogger(__name__)

# Get the project root directory (for absolute path resolution)
PROJECT_ROOT = Path(os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))))


def resolve_path(path):
    """
    Resolve a path against the project root when it is relative.

    Args:
        path (str or Path): Absolute or project-relative path

    Returns:
        Path: Absolute path
    """
    path = Path(path)
    return path if path.is_absolute() else PROJECT_ROOT / path


def load_config(config_path='config/config.yaml'):
    """
    Load configuration from a YAML or JSON file.

    Args:
        config_path (str): Path to the configuration file

    Returns:
        dict: Configuration data
    """
    config_path = resolve_path(config_path)
    try:
        with open(config_path, 'r') as file:
            data = yaml.safe_load(file)
    except (OSError, yaml.YAMLError) as e:
        logger.error(f"Failed to load configuration from {config_path}: {str(e)}")
        raise ConfigurationError(f"cannot read configuration {config_path}: {e}") from e

    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"configuration {config_path} must be a mapping, got {type(data).__name__}")
    return data


def merge_config(base, overlay):
    """
    Deep-merge two configuration mappings; values in overlay win.

    Args:
        base (dict): Default configuration
        overlay (dict): Overrides

    Returns:
        dict: New merged mapping (inputs are left untouched)
    """
    merged = copy.deepcopy(base) if base else {}
    for key, value in (overlay or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_config(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def setup_logging(log_dir='logs', log_level=logging.INFO):
    """
    Configure logging for the application.

    Args:
        log_dir (str): Directory to store log files
        log_level (int): Logging level

    Returns:
        logging.Logger: Configured logger
    """
    log_dir = resolve_path(log_dir)
    os.makedirs(log_dir, exist_ok=True)

    log_file = log_dir / f"lab_{datetime.now().strftime('%Y%m%d_%H%M%S')}.log"

    logging.basicConfig(
        level=log_level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(log_file),
            logging.StreamHandler(sys.stdout)
        ]
    )

    return logging.getLogger(__name__)


def ensure_dir_exists(directory):
    """
    Ensure that a directory exists, creating it if necessary.

    Args:
        directory (str): Path to the directory

    Returns:
        Path: The absolute directory path
    """
    directory = resolve_path(directory)
    os.makedirs(directory, exist_ok=True)
    return directory


def get_timestamp():
    """
    Get a formatted timestamp for the current time.

    Returns:
        str: Formatted timestamp
    """
    return datetime.now().strftime("%Y-%m-%d_%H-%M-%S")


def make_rng(seed, *stream):
    """
    Build a counter-based generator for one named stream of a seed.

    Distinct stream keys give independent generators; the same (seed, stream)
    always reproduces the same draws.

    Args:
        seed (int): Run seed
        *stream (int): Stream keys, e.g. a purpose index and a chunk index

    Returns:
        numpy.random.Generator: Philox-backed generator
    """
    entropy = [int(seed)] + [int(key) for key in stream]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def spawn_seeds(seed, n):
    """
    Derive n independent child seeds from a parent seed.

    Args:
        seed (int): Parent seed
        n (int): Number of children

    Returns:
        list: Integer seeds
    """
    children = np.random.SeedSequence(int(seed)).spawn(n)
    return [int(child.generate_state(1, dtype=np.uint32)[0]) for child in children]


def random_unit_vector(d, rng):
    """
    Draw a vector uniformly from the unit sphere in R^d.

    Args:
        d (int): Dimension
        rng (numpy.random.Generator): Random source

    Returns:
        numpy.ndarray: Unit vector
    """
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def canonical_hash(payload):
    """
    SHA-256 of the canonical JSON encoding of a payload.

    Args:
        payload (dict): JSON-serializable data

    Returns:
        str: Hex digest
    """
    encoded = json.dumps(payload, sort_keys=True, separators=(',', ':'), default=_json_default)
    return hashlib.sha256(encoded.encode('utf-8')).hexdigest()


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")
