"""Shared test builders."""

import numpy as np

from motionctx.motion import (MotionClip, pad_virtual_joints, reorganize_mesh_params,
                              unify_pose2d, unify_pose3d)


def make_clip(half=4, joints=6, native_pose=4, seed=0, clip_id="c0"):
    """Random synchronized clip: 2F frames, pose joints padded to `joints`."""
    rng = np.random.default_rng(seed)
    p3 = rng.normal(size=(2 * half, native_pose, 3))
    pose3d = pad_virtual_joints(unify_pose3d(p3), joints)
    pose2d = pad_virtual_joints(unify_pose2d(p3[:, :, :2]), joints)
    mesh = reorganize_mesh_params(rng.normal(size=(2 * half, 3 * joints)),
                                  rng.normal(size=10) * 0.5)
    return MotionClip(pose2d, pose3d, mesh, clip_id=clip_id, source="test")
