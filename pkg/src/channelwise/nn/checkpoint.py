"""Plain-text tensor dump.

Layout (UTF-8, ``\\n`` line endings)::

    #channelwise-tensors 1
    <one line of JSON: free-form header>
    tensor <name> <dim,dim,...>
    <values, space separated, Python repr of float64>
    tensor ...

Scalars use an empty dimension list.  ``repr`` of a float64 round-trips
exactly, so a save/load cycle reproduces every bit.
"""

import json

import numpy as np

MAGIC = "#channelwise-tensors 1"


class CheckpointError(ValueError):
    pass


def save_tensors(path, tensors, header=None):
    lines = [MAGIC, json.dumps(header or {}, sort_keys=True)]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"tensor {name!r} has non-finite values")
        if " " in name:
            raise CheckpointError(f"tensor name {name!r} contains a space")
        lines.append(f"tensor {name} {','.join(str(d) for d in arr.shape)}")
        lines.append(" ".join(repr(float(x)) for x in arr.ravel()))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_tensors(path):
    """Returns ``(tensors, header)``."""
    with open(path) as fh:
        lines = fh.read().split("\n")
    if not lines or lines[0] != MAGIC:
        raise CheckpointError(f"{path}: not a tensor dump (bad magic line)")
    header = json.loads(lines[1])
    tensors = {}
    i = 2
    while i < len(lines) and lines[i]:
        parts = lines[i].split(" ")
        if len(parts) != 3 or parts[0] != "tensor":
            raise CheckpointError(f"{path}:{i + 1}: malformed tensor header {lines[i]!r}")
        _, name, dims = parts
        shape = tuple(int(d) for d in dims.split(",")) if dims else ()
        values = [float(x) for x in lines[i + 1].split()] if lines[i + 1] else []
        if len(values) != int(np.prod(shape, dtype=int)):
            raise CheckpointError(f"{path}: tensor {name} expects {np.prod(shape)} values, found {len(values)}")
        tensors[name] = np.array(values, dtype=np.float64).reshape(shape)
        i += 2
    return tensors, header
