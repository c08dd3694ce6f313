#!/usr/bin/env python3
"""
ANH simulator configuration

Finds the gas table the same way our client finds its token file: walk a list
of candidate locations and take the first one that loads.
"""
import json
import os
from pathlib import Path
from typing import Any, Dict, List, Optional

from anh_errors import GasTableError
from anh_log import get_logger

logger = get_logger(__name__)

BUNDLED_GAS_TABLE = Path(__file__).resolve().parent / "config" / "gas_table.json"

DEFAULT_GAS_TABLE: Dict[str, Dict[str, int]] = {
    "intrinsic": {"transfer": 1000, "create": 2000, "call": 2000, "oath": 2000},
    "ops": {
        "PUSH": 1,
        "ADD": 1,
        "SUB": 1,
        "MUL": 1,
        "JUMPIF": 1,
        "DERIVE_ACCOUNT": 1,
        "HALT": 1,
        "LOAD": 20,
        "STORE": 20,
        "TRANSFER": 100,
        "BURN": 1,
        "QUERY": 20,
    },
}


def gas_table_candidates(explicit: Optional[str] = None) -> List[Path]:
    candidates: List[Path] = []
    if explicit:
        candidates.append(Path(explicit))
    env_path = os.environ.get("ANH_GAS_TABLE")
    if env_path:
        candidates.append(Path(env_path))
    candidates.append(Path("anh_gas_table.json"))
    home = os.path.expanduser("~")
    if home and os.path.isdir(home):
        candidates.append(Path(home) / ".anh" / "gas_table.json")
    candidates.append(BUNDLED_GAS_TABLE)
    return candidates


def merge_gas_config(base: Dict[str, Any], override: Optional[Dict[str, Any]]) -> Dict[str, Dict[str, int]]:
    merged = {section: dict(base.get(section, {})) for section in ("intrinsic", "ops")}
    for section, entries in (override or {}).items():
        if section not in merged or not isinstance(entries, dict):
            raise GasTableError(f"unknown gas table section '{section}'")
        merged[section].update(entries)
    return merged


def load_gas_config(explicit: Optional[str] = None, override: Optional[Dict[str, Any]] = None) -> Dict[str, Dict[str, int]]:
    """
    Load raw gas schedule data.

    Args:
        explicit: Path given on the command line; a missing explicit file is an error
        override: Per-scenario entries layered on top of whatever was found

    Returns:
        dict with 'intrinsic' and 'ops' sections
    """
    if explicit and not Path(explicit).exists():
        raise GasTableError(f"gas table not found: {explicit}")

    for path in gas_table_candidates(explicit):
        try:
            if path.exists():
                with open(path, "r", encoding="utf-8") as f:
                    data = json.load(f)
                logger.debug(f"Loaded gas table from {path}")
                return merge_gas_config(DEFAULT_GAS_TABLE, merge_gas_config(data, override))
        except (OSError, json.JSONDecodeError) as e:
            if explicit and path == Path(explicit):
                raise GasTableError(f"could not read gas table {path}: {e}")
            logger.warning(f"Skipping unreadable gas table {path}: {e}")
            continue

    return merge_gas_config(DEFAULT_GAS_TABLE, override)
