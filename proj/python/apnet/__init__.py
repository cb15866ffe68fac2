"""Python bindings for the apn segmentation library.

Configuration arguments accept dicts (or JSON text) in the same format as the
command-line config files.
"""

import json

from . import _apnet
from ._apnet import (
    Error,
    Mesh,
    Volume,
    apply_action,
    evaluate,
    hausdorff,
    icosphere,
    point_to_surface_distance,
    q_value,
    read_obj,
    read_volume,
    reward,
    run_cli,
    segment,
    smoothness_penalty,
    write_obj,
    write_volume,
)


def _text(config):
    if config is None:
        return ""
    return config if isinstance(config, str) else json.dumps(config)


def generate_phantoms(config=None, threads=1):
    return _apnet.generate_phantoms(_text(config), threads)


def sample_aperture(volume, mesh, aperture=None, threads=1):
    return _apnet.sample_aperture(volume, mesh, _text(aperture), threads)


def ideal_action(estimate, truth, lam=1.0, aperture=None):
    return _apnet.ideal_action(estimate, truth, lam, _text(aperture))


def bench(config, out, threads=1):
    return json.loads(_apnet.bench(_text(config), str(out), threads))


__all__ = [
    "Error",
    "Mesh",
    "Volume",
    "apply_action",
    "bench",
    "evaluate",
    "generate_phantoms",
    "hausdorff",
    "icosphere",
    "ideal_action",
    "point_to_surface_distance",
    "q_value",
    "read_obj",
    "read_volume",
    "reward",
    "run_cli",
    "sample_aperture",
    "segment",
    "smoothness_penalty",
    "write_obj",
    "write_volume",
]
