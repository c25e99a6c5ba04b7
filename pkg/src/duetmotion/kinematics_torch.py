"""Differentiable mirror of the skeleton kinematics.

The numpy routines in body_model are the reference; these torch versions exist
so losses can backpropagate through joint positions and bone lengths. Both
routes are cross-checked in the tests.

Tensor layout: pose parameter vectors pack one person-frame as
[global_orient(3), joint_rotations(21*3), translation(3)] = 69 reals.
"""

from __future__ import annotations

import torch

from .body_model import BETA_DIM, NUM_BODY_JOINTS, NUM_JOINTS, KinematicTree

POSE_DIM = 3 + NUM_BODY_JOINTS * 3 + 3  # 69


def pack_pose(global_orient, joint_rotations, translation):
    return torch.cat(
        [
            global_orient.reshape(*global_orient.shape[:-1], 3),
            joint_rotations.reshape(*joint_rotations.shape[:-2], NUM_BODY_JOINTS * 3),
            translation.reshape(*translation.shape[:-1], 3),
        ],
        dim=-1,
    )


def unpack_pose(vec: torch.Tensor):
    """Split (..., 69) into orient (..., 3), rots (..., 21, 3), trans (..., 3)."""
    orient = vec[..., :3]
    rots = vec[..., 3 : 3 + NUM_BODY_JOINTS * 3].reshape(*vec.shape[:-1], NUM_BODY_JOINTS, 3)
    trans = vec[..., 3 + NUM_BODY_JOINTS * 3 :]
    return orient, rots, trans


def axisangle_to_matrix_torch(v: torch.Tensor) -> torch.Tensor:
    """Rodrigues map for (..., 3) axis-angle vectors, batched.

    Uses the series form of sin(t)/t and (1-cos t)/t^2 below a threshold so the
    map stays smooth for autograd at t = 0.
    """
    theta2 = (v * v).sum(dim=-1, keepdim=True).unsqueeze(-1)  # (..., 1, 1)
    theta = torch.sqrt(theta2.clamp_min(1e-30))
    zeros = torch.zeros_like(v[..., 0])
    K = torch.stack(
        [
            torch.stack([zeros, -v[..., 2], v[..., 1]], dim=-1),
            torch.stack([v[..., 2], zeros, -v[..., 0]], dim=-1),
            torch.stack([-v[..., 1], v[..., 0], zeros], dim=-1),
        ],
        dim=-2,
    )
    small = theta2 < 1e-12
    a = torch.where(small, 1.0 - theta2 / 6.0, torch.sin(theta) / theta)
    b = torch.where(small, 0.5 - theta2 / 24.0, (1.0 - torch.cos(theta)) / theta2.clamp_min(1e-30))
    eye = torch.eye(3, dtype=v.dtype, device=v.device).expand(K.shape)
    return eye + a * K + b * (K @ K)


def forward_kinematics_torch(
    pose_vec: torch.Tensor, beta: torch.Tensor, tree: KinematicTree
) -> torch.Tensor:
    """Joint positions for packed poses.

    pose_vec: (..., 69), beta: (..., 10) broadcastable against pose_vec's batch
    shape. Returns (..., 22, 3).
    """
    if pose_vec.shape[-1] != POSE_DIM:
        raise ValueError(f"pose vectors must have {POSE_DIM} entries")
    if beta.shape[-1] != BETA_DIM:
        raise ValueError(f"beta must have {BETA_DIM} entries")
    orient, rots, trans = unpack_pose(pose_vec)
    basis = torch.as_tensor(tree.shape_basis, dtype=pose_vec.dtype, device=pose_vec.device)
    offsets = torch.as_tensor(tree.base_offsets, dtype=pose_vec.dtype, device=pose_vec.device)
    scales = 1.0 + beta @ basis.T  # (..., 22)

    R_root = axisangle_to_matrix_torch(orient)
    R_joints = axisangle_to_matrix_torch(rots)  # (..., 21, 3, 3)

    pos = [trans]
    rot = [R_root]
    for i in range(1, NUM_JOINTS):
        p = int(tree.parents[i])
        step = scales[..., i : i + 1] * offsets[i]
        pos.append(pos[p] + (rot[p] @ step.unsqueeze(-1)).squeeze(-1))
        rot.append(rot[p] @ R_joints[..., i - 1, :, :])
    return torch.stack(pos, dim=-2)


def bone_lengths_torch(joints: torch.Tensor, tree: KinematicTree) -> torch.Tensor:
    """Parent-child distances for (..., 22, 3) joints, smooth near zero."""
    parents = torch.as_tensor(tree.parents[1:], dtype=torch.long, device=joints.device)
    diff = joints[..., 1:, :] - joints[..., parents, :]
    return torch.sqrt((diff * diff).sum(dim=-1).clamp_min(1e-12))
