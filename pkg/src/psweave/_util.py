"""Shared helpers: seeded RNG streams, float serialization, thread limits."""

import os

import numpy as np

# Stream purposes. Fixed integers so that identical (seed, purpose, index)
# triples always reproduce the same draws regardless of call order.
STREAM_CHAIN = 0
STREAM_ECON = 1
STREAM_PPC = 2
STREAM_SYNTH = 3
STREAM_AMPUTATE = 4


def rng_stream(seed, purpose, index=0):
    """Independent Generator for (seed, purpose, index).

    Philox is counter-based, so distinct keys give statistically independent
    streams without any sequential state to coordinate between workers. The
    key is two 64-bit words: the seed, and purpose/index packed together.
    """
    if not 0 <= int(purpose) < 2 ** 31:
        raise ValueError("purpose out of range")
    if not 0 <= int(index) < 2 ** 32:
        raise ValueError("index out of range")
    key = [int(seed) & (2 ** 64 - 1), (int(purpose) << 32) | int(index)]
    return np.random.Generator(np.random.Philox(key=key))


def fmt_float(x):
    """Serialize a float so that reading it back is lossless (repr round-trip)."""
    if isinstance(x, float) and x != x:
        return "NA"
    return repr(float(x))


def worker_count(requested=None):
    """Resolve a worker count: explicit request, else PSWEAVE_THREADS, else 1."""
    if requested is not None and requested > 0:
        n = int(requested)
    else:
        env = os.environ.get("PSWEAVE_THREADS", "")
        try:
            n = int(env) if env else 1
        except ValueError:
            n = 1
    cap = os.cpu_count() or 1
    return max(1, min(n, cap))
