"""Seeded random streams.

All randomness comes from numpy's counter-based Philox generator. A root seed
is split hierarchically with ``SeedSequence`` spawn keys, so each subsystem
(data, diffusion training, classifier, each generation job...) owns a stream
that does not shift when another subsystem draws more or fewer numbers.
"""

from typing import Sequence, Union

import numpy as np

from numerics.tensor import Tensor

RngState = np.random.Generator

# stable integer ids for named streams; never renumber
STREAMS = {
    "data": 1,
    "diffusion-train": 2,
    "classifier": 3,
    "generation": 4,
    "partition": 5,
    "demo": 6,
    "verify": 7,
    "bank": 8,
    "baseline": 9,
    "init": 10,
}


def make_rng(seed: int, *path: Union[str, int]) -> RngState:
    """Generator for the stream ``seed / path[0] / path[1] ...``."""
    key = tuple(STREAMS[p] if isinstance(p, str) else int(p) for p in path)
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(seq))


def rng_gaussian(rng: RngState, shape: Sequence[int]) -> Tensor:
    """I.i.d. standard-normal tensor; advances the stream."""
    return Tensor._wrap(rng.standard_normal(tuple(shape)), "rng_gaussian")
