# Copyright (c) 2024-present, capguard contributors.
# All rights reserved.
#
# This source code is licensed under the license found in the
# LICENSE file in the root directory of this source tree.


import os
import json
import hashlib
import platform

MASK64 = (1 << 64) - 1


def mix64(seed, key):
    """splitmix64 finalizer over (seed, key); used to derive independent per-run seeds."""
    z = (seed + 0x9E3779B97F4A7C15 * (key + 1)) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj):
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def versions():
    import numpy
    import torch

    return {
        "python": platform.python_version(),
        "numpy": numpy.__version__,
        "torch": torch.__version__,
    }


def write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def write_manifest(path, command, config, inputs, outputs, seed):
    manifest = {
        "command": command,
        "seed": seed,
        "config_hash": config_hash(config),
        "inputs": {os.path.basename(p): sha256_file(p) for p in inputs},
        "outputs": [os.path.basename(p) for p in outputs],
        "versions": versions(),
    }
    write_json(path, manifest)
    return manifest
