"""
seeding.py
Named random substreams derived from one master seed.
"""
import zlib
from typing import Dict, Optional

import numpy as np

# Stages that draw randomness. Each gets its own stream so changing one
# stage's seed leaves the others untouched.
STREAMS = ("binarize", "projection", "init", "shuffle", "eval_pairs", "split", "sample")


def substream_seed(master_seed: int, name: str, overrides: Optional[Dict[str, int]] = None) -> int:
    """
    Derive the integer seed of a named substream.

    Args:
        master_seed: Experiment master seed
        name: Stream name (see STREAMS)
        overrides: Explicit per-stream seeds that replace the derived value

    Returns:
        A 63-bit non-negative integer seed
    """
    if overrides and name in overrides:
        return int(overrides[name])
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(zlib.crc32(name.encode("utf-8")),))
    return int(seq.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def substream(master_seed: int, name: str, overrides: Optional[Dict[str, int]] = None) -> np.random.Generator:
    """Generator for a named substream."""
    return np.random.default_rng(substream_seed(master_seed, name, overrides))


def counter_generator(seed: int, counter: int) -> np.random.Generator:
    """
    Counter-based generator: the stream for (seed, counter) can be recreated
    in any order without replaying the streams before it.
    """
    key = (int(seed) & ((1 << 64) - 1)) | (int(counter) << 64)
    return np.random.Generator(np.random.Philox(key=key))
