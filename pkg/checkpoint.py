"""
💾 Parameter checkpoints: versioned JSON map of parameter path → shape + row-major values
"""
import json
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from sentry_config import get_logger
from tensor_core import DomainError

logger = get_logger(__name__)

CHECKPOINT_FORMAT = "comateformer-checkpoint"
CHECKPOINT_VERSION = 1


def checkpoint_document(params: Dict[str, np.ndarray], config: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": config or {},
        "parameters": {
            name: {"shape": list(value.shape), "values": np.asarray(value, dtype=np.float64).reshape(-1).tolist()}
            for name, value in sorted(params.items())
        },
    }


def save_checkpoint(path: Union[str, Path], params: Dict[str, np.ndarray],
                    config: Optional[Dict[str, Any]] = None) -> Path:
    """Write params (and the run config that produced them) as one JSON document"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(checkpoint_document(params, config)))
    logger.info(f"💾 Saved checkpoint with {len(params)} parameters to {path}")
    return path


def parse_checkpoint(document: Dict[str, Any]) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    if not isinstance(document, dict) or document.get("format") != CHECKPOINT_FORMAT:
        raise DomainError("not a comateformer checkpoint")
    if document.get("version") != CHECKPOINT_VERSION:
        raise DomainError(f"unsupported checkpoint version {document.get('version')!r}")

    params: Dict[str, np.ndarray] = {}
    for name, entry in document.get("parameters", {}).items():
        try:
            shape = tuple(int(s) for s in entry["shape"])
            values = np.asarray(entry["values"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as e:
            raise DomainError(f"checkpoint parameter {name}: {e}") from e
        if values.size != int(np.prod(shape, dtype=np.int64)):
            raise DomainError(f"checkpoint parameter {name}: {values.size} values for shape {shape}")
        params[name] = values.reshape(shape)
    return params, document.get("config", {})


def load_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """Returns (params, config dict); the caller validates the config"""
    path = Path(path)
    try:
        document = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DomainError(f"checkpoint {path} is not valid JSON: {e}") from e
    params, config = parse_checkpoint(document)
    logger.debug(f"Loaded {len(params)} parameters from {path}")
    return params, config
