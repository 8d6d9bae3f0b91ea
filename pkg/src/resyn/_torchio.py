"""Weight blobs (npz keyed by parameter name) and torch RNG helpers."""
from __future__ import annotations

import contextlib
from pathlib import Path

import numpy as np
import torch

from .errors import DataError


def save_weights(module: torch.nn.Module, path) -> None:
    state = {k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}
    with open(path, "wb") as f:
        np.savez(f, **state)


def load_weights(module: torch.nn.Module, path) -> None:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing weight blob: {path}")
    with np.load(path) as blob:
        state = {k: torch.from_numpy(blob[k]) for k in blob.files}
    module.load_state_dict(state)


@contextlib.contextmanager
def seeded(seed: int):
    """Run a block with torch's global RNG seeded, restoring it afterwards."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(seed))
        yield


def set_deterministic(flag: bool = True) -> None:
    torch.use_deterministic_algorithms(flag)
    if flag:
        torch.set_num_threads(1)


def image_to_tensor(image: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """HxWx3 array -> 1x3xHxW tensor."""
    return torch.from_numpy(np.ascontiguousarray(np.asarray(image).transpose(2, 0, 1))).to(dtype)[None]
