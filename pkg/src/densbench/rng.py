"""Reproducible random streams.

All randomness flows through numpy's Philox bit generator (counter-based,
64-bit seeding), so streams are identical across platforms and processes.
Child streams are derived with SeedSequence.spawn, which is collision-safe.
"""

import numpy as np


def make_rng(seed, *path):
    """Philox generator for `seed`, optionally descended along integer `path`."""
    ss = np.random.SeedSequence(seed)
    for p in path:
        ss = ss.spawn(p + 1)[p]
    return np.random.Generator(np.random.Philox(ss))


def rng_state(rng):
    """JSON-safe snapshot of a Philox generator's state."""
    st = rng.bit_generator.state
    return {
        "counter": [int(v) for v in st["state"]["counter"]],
        "key": [int(v) for v in st["state"]["key"]],
        "buffer": [int(v) for v in st["buffer"]],
        "buffer_pos": int(st["buffer_pos"]),
        "has_uint32": int(st["has_uint32"]),
        "uinteger": int(st["uinteger"]),
    }


def restore_rng(snapshot):
    """Rebuild a Philox generator from an rng_state snapshot."""
    bg = np.random.Philox()
    bg.state = {
        "bit_generator": "Philox",
        "state": {
            "counter": np.array(snapshot["counter"], dtype=np.uint64),
            "key": np.array(snapshot["key"], dtype=np.uint64),
        },
        "buffer": np.array(snapshot["buffer"], dtype=np.uint64),
        "buffer_pos": snapshot["buffer_pos"],
        "has_uint32": snapshot["has_uint32"],
        "uinteger": snapshot["uinteger"],
    }
    return np.random.Generator(bg)
