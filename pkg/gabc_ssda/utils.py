import datetime
import os
from typing import Union

import torch
import xxhash

# Seeds handed to torch must fit a signed 64-bit integer.
_SEED_MASK = (1 << 63) - 1


def derive_seed(seed: int, tag: str, index: int = 0) -> int:
    """Derive a stable sub-seed from a run seed, a purpose tag and an index.

    The same triple always yields the same value across processes and
    platforms, so every random draw of a run is a pure function of its seed.
    """
    return xxhash.xxh64_intdigest(f"{seed}:{tag}:{index}") & _SEED_MASK


def make_generator(seed: int, tag: str, index: int = 0) -> torch.Generator:
    generator = torch.Generator()
    generator.manual_seed(derive_seed(seed, tag, index))
    return generator


def fingerprint(text: Union[str, bytes]) -> str:
    """Short content hash, used to tag output directories with their config."""
    return xxhash.xxh64_hexdigest(text)[:8]


def timestamped_dir(root: str, label: str = "") -> str:
    stamp = datetime.datetime.now().strftime("%Y%m%d-%H%M%S")
    name = f"{stamp}-{label}" if label else stamp
    path = os.path.join(root, name)
    os.makedirs(path, exist_ok=True)
    return path
