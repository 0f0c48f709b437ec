"""
Checkpoint container shared by decomposer and refiner weights.

A checkpoint is a single ``torch.save`` file holding a versioned header and
named parameter tensors. Tensors are stored as-is, so save/load is bit-exact.
"""

import hashlib
from pathlib import Path
from typing import Any, Dict, Mapping, Tuple, Union

import torch
from loguru import logger
from torch import nn

from .errors import ArtifactError

FORMAT_VERSION = 1

StateDict = Mapping[str, torch.Tensor]


def _cpu_state(state: StateDict) -> Dict[str, torch.Tensor]:
    return {name: tensor.detach().cpu().clone() for name, tensor in state.items()}


def save_checkpoint(path: Union[str, Path], kind: str, header: Mapping[str, Any], tensors: Mapping[str, StateDict]) -> Path:
    """
    Write a checkpoint.

    Args:
        path: Destination file.
        kind: "decomposer" or "refiner".
        header: Primitive values describing the architecture (strategy, C, ...).
        tensors: Groups of named tensors; a decomposer has one group, a refiner
            one per branch tag.
    """
    path = Path(path)
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "header": dict(header),
        "tensors": {group: _cpu_state(state) for group, state in tensors.items()},
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(payload, path)
    except OSError as e:
        raise ArtifactError(f"cannot write checkpoint {path}: {e}")
    logger.info(f"Saved {kind} checkpoint to {path}")
    return path


def load_checkpoint(path: Union[str, Path], kind: str) -> Tuple[Dict[str, Any], Dict[str, Dict[str, torch.Tensor]]]:
    """Read a checkpoint written by :func:`save_checkpoint`, checking its header."""
    path = Path(path)
    if not path.is_file():
        raise ArtifactError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise ArtifactError(f"cannot read checkpoint {path}: {e}")
    if not isinstance(payload, dict) or payload.get("format_version") != FORMAT_VERSION:
        raise ArtifactError(f"unsupported checkpoint format in {path}")
    if payload.get("kind") != kind:
        raise ArtifactError(f"{path} holds a '{payload.get('kind')}' checkpoint, expected '{kind}'")
    return payload["header"], payload["tensors"]


def state_checksum(source: Union[nn.Module, StateDict]) -> str:
    """SHA-256 over names, dtypes, shapes and raw bytes of a state dict."""
    state = source.state_dict() if isinstance(source, nn.Module) else source
    digest = hashlib.sha256()
    for name in sorted(state):
        tensor = state[name].detach().cpu().contiguous()
        digest.update(name.encode())
        digest.update(str(tensor.dtype).encode())
        digest.update(str(tuple(tensor.shape)).encode())
        digest.update(tensor.numpy().tobytes())
    return digest.hexdigest()
