"""Seed derivation shared by every stochastic stage."""

import hashlib

import numpy as np


def derive_seed(seed, *labels):
    """Return a 63-bit integer seed for the stage named by ``labels``.

    The stage path is hashed together with the global seed, so adding a new
    stage never perturbs the random streams of existing ones.
    """
    key = ":".join([str(int(seed))] + [str(x) for x in labels])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def rng_for(seed, *labels):
    return np.random.default_rng(derive_seed(seed, *labels))
