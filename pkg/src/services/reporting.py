"""
reporting.py - Report files for experiment presets

Tables are comma-separated text written with numpy.savetxt. Their '# '
header embeds the canonical config, the seed and the content hash, so every
table carries what is needed to reproduce it. Summaries and budgets are
indented JSON.
"""

from typing import Any, Dict, Sequence
import json
import logging
import os

import numpy as np

logger = logging.getLogger(__name__)


def report_metadata(config_dict: Dict[str, Any], seed: int, config_hash: str, preset: str) -> Dict[str, Any]:
    return {
        "preset": preset,
        "seed": seed,
        "content_hash": config_hash,
        "config": config_dict,
    }


def write_table(
    filepath: str,
    columns: Sequence[str],
    data: np.ndarray,
    metadata: Dict[str, Any]
) -> str:
    """
    Write a CSV table with a metadata header.

    Args:
        filepath: Destination path (parent directories are created)
        columns: Column names
        data: 2-D array with one column per name
        metadata: Reproduction metadata (see report_metadata)

    Returns:
        The path written
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[1] != len(columns):
        raise ValueError(f"table {filepath} has shape {data.shape}, expected {len(columns)} columns")

    os.makedirs(os.path.dirname(os.path.abspath(filepath)), exist_ok=True)
    header = "metadata: " + json.dumps(metadata, sort_keys=True, separators=(",", ":")) + "\n" + ",".join(columns)
    np.savetxt(filepath, data, delimiter=",", header=header, comments="# ", fmt="%.10g")
    logger.info(f"Wrote {filepath} ({data.shape[0]} rows)")
    return filepath


def read_table_metadata(filepath: str) -> Dict[str, Any]:
    """Metadata embedded in a table written by write_table."""
    with open(filepath, "r", encoding="utf-8") as f:
        first = f.readline()
    prefix = "# metadata: "
    if not first.startswith(prefix):
        raise ValueError(f"{filepath} has no metadata header")
    return json.loads(first[len(prefix):])


def write_json(filepath: str, data: Dict[str, Any]) -> str:
    """Save data to an indented JSON file."""
    os.makedirs(os.path.dirname(os.path.abspath(filepath)), exist_ok=True)
    with open(filepath, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True, default=float)
    logger.info(f"Wrote {filepath}")
    return filepath


def format_budget_table(budget_dict: Dict[str, Any]) -> str:
    """Per-source, per-stage attenuation table as plain text."""
    lines = [
        f"{'source':<14}{'crystal':>12}{'spatial':>10}{'grating':>10}{'fp':>10}{'aom':>10}{'detector':>12}",
        "-" * 78,
    ]
    for label, entry in budget_dict["sources"].items():
        stages = entry["stages"]
        lines.append(
            f"{label:<14}{entry['crystal']:>12.4g}{stages['spatial']:>10.3g}{stages['grating']:>10.3g}"
            f"{stages['fp']:>10.3g}{stages['aom']:>10.3g}{entry['detector']:>12.4g}"
        )
    lines.append("-" * 78)
    lines.append(f"{'dark (photon-equivalent)':<66}{budget_dict['dark_equivalent']:>12.4g}")
    lines.append(f"{'total noise floor':<66}{budget_dict['total_noise_floor']:>12.4g}")
    return "\n".join(lines)
