"""Versioned ``.npz`` checkpoints for :class:`ValueNet`."""

from __future__ import annotations

import json
import zipfile

import numpy as np

from .._io import atomic_writer
from ..errors import CheckpointError
from .net import NetLayout, ValueNet

FORMAT_VERSION = 1


def save_checkpoint(net: ValueNet, path) -> None:
    header = {
        "version": FORMAT_VERSION,
        "L": net.L,
        "lam": net.lam,
        "rate": net.rate,
        "dt": net.dt,
        "seed": net.seed,
        "out_scale": net.out_scale,
        "layouts": [{"input_dim": lay.input_dim, "hidden": list(lay.hidden),
                     "residual_payoff": lay.residual_payoff} for lay in net.layouts],
    }
    arrays = {"header": np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)}
    for l in range(net.L):
        arrays[f"theta_{l}"] = net.thetas[l]
        arrays[f"shift_{l}"] = net.in_shift[l]
        arrays[f"scale_{l}"] = net.in_scale[l]
    with atomic_writer(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> ValueNet:
    """Restore a network; any corruption or version mismatch raises :class:`CheckpointError`."""
    try:
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(bytes(z["header"]).decode())
            if header.get("version") != FORMAT_VERSION:
                raise CheckpointError(
                    f"{path}: checkpoint version {header.get('version')!r}, expected {FORMAT_VERSION}")
            L = int(header["L"])
            layouts = [NetLayout(d["input_dim"], tuple(d["hidden"]), d["residual_payoff"])
                       for d in header["layouts"]]
            thetas = [np.array(z[f"theta_{l}"]) for l in range(L)]
            shifts = [np.array(z[f"shift_{l}"]) for l in range(L)]
            scales = [np.array(z[f"scale_{l}"]) for l in range(L)]
    except CheckpointError:
        raise
    except (OSError, KeyError, ValueError, EOFError, zipfile.BadZipFile, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    try:
        net = ValueNet(layouts, thetas, header["lam"], header["rate"], header["dt"], header["seed"],
                       shifts, scales, header["out_scale"])
    except ValueError as exc:
        raise CheckpointError(f"{path}: inconsistent checkpoint ({exc})") from exc
    if not all(np.all(np.isfinite(t)) for t in thetas):
        raise CheckpointError(f"{path}: non-finite parameters")
    return net
