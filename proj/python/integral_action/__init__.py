"""Python access to the integral_action core.

Configs, reports and checkpoint metadata cross the boundary as JSON; the
wrappers below turn them into plain dicts.
"""

import json

from . import _core
from ._core import (
    deranged_context,
    encode_pose_clip as _encode_pose_clip,
    gate_regularizer,
    integrate,
    oracle_selection,
    read_appearance_clip,
    read_pose_clip,
    read_pose_frames,
    temporal_shift,
    top_k_accuracy,
)

__all__ = [
    "default_config",
    "full_scale_config",
    "encode_pose_clip",
    "generate_video",
    "load_checkpoint",
    "evaluate",
    "deranged_context",
    "gate_regularizer",
    "integrate",
    "oracle_selection",
    "read_appearance_clip",
    "read_pose_clip",
    "read_pose_frames",
    "temporal_shift",
    "top_k_accuracy",
]


def _dump(config):
    if config is None:
        return ""
    return json.dumps(config)


def default_config():
    return json.loads(_core.default_config())


def full_scale_config():
    return json.loads(_core.full_scale_config())


def normalize_config(config):
    """Validates a (partial) config and fills in every default."""
    return json.loads(_core.normalize_config(json.dumps(config)))


def encode_pose_clip(keypoints, person_scores, config=None):
    """keypoints: T x P x K x 3 (x, y, score), NaN for missing joints; person_scores: T x P."""
    return _encode_pose_clip(keypoints, person_scores, _dump(config))


def generate_video(action, context, seed, config=None):
    """Returns (appearance F x 3 x H x W, keypoints T x P x K x 3, person_scores T x P)."""
    return _core.generate_video(action, context, seed, _dump(config))


def load_checkpoint(path):
    ckpt = _core.load_checkpoint(str(path))
    ckpt["metadata"] = json.loads(ckpt["metadata"])
    return ckpt


def evaluate(checkpoint, split="in", data_dir=None, config=None, clips=0, weight=None):
    """Scores a checkpoint; without data_dir the split is regenerated from config."""
    report = _core.evaluate(str(checkpoint), split, str(data_dir) if data_dir else "", _dump(config), clips, weight)
    return json.loads(report)
