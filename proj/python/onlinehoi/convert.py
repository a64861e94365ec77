"""Writers for the on-disk dataset layouts, plus mapping stubs for real datasets.

A generation dataset is a directory holding ``train.motion``, ``val.motion``
and ``test.motion``; a perception dataset holds ``train/``, ``val/`` and
``test/`` folders of ``clip_NNNN.clip`` files. Point a run config's
``paths.data`` at the directory. For generation, ``data.pose_dim`` and
``data.object_pose_dim`` must match the widths written here.
"""

import os
from dataclasses import dataclass, field

import numpy as np


@dataclass
class MotionItem:
    actor: np.ndarray        # T x D, the leading person
    reactor: np.ndarray      # T x D, the person whose motion is generated
    object_pose: np.ndarray  # T x P
    geometry: np.ndarray     # G x 3 object surface samples in the object frame
    label: int = 0           # interaction class, used by the evaluation classifier
    cue_frame: int = -1      # synthetic data only
    cue_sign: float = 0.0


@dataclass
class Clip:
    points: list             # T arrays of shape n_t x 3
    normals: list            # T arrays of shape n_t x 3, unit length
    labels: list = field(default_factory=list)  # T action ids, or empty when unlabeled


def _rows(f, m):
    for row in np.atleast_2d(np.asarray(m, dtype=float)):
        f.write(" ".join(repr(float(v)) for v in row) + "\n")


def write_motion_file(path, items):
    items = list(items)
    with open(path, "w") as f:
        f.write("onlinehoi-motion 1\nitems %d\n" % len(items))
        for i, m in enumerate(items):
            T, D = np.shape(m.actor)
            if np.shape(m.reactor) != (T, D) or np.shape(m.object_pose)[0] != T or np.shape(m.geometry)[1] != 3:
                raise ValueError("item %d: inconsistent shapes" % i)
            f.write("item %d %d %d %d %d %d %d %r\n" % (i, m.label, T, D, np.shape(m.object_pose)[1],
                                                        np.shape(m.geometry)[0], m.cue_frame, float(m.cue_sign)))
            for block in (m.actor, m.reactor, m.object_pose, m.geometry):
                _rows(f, block)


def write_clip_file(path, clip):
    T = len(clip.points)
    if len(clip.normals) != T or (clip.labels and len(clip.labels) != T):
        raise ValueError("clip: points, normals and labels must cover the same frames")
    with open(path, "w") as f:
        f.write("onlinehoi-clip 1\nframes %d\n" % T)
        for t in range(T):
            pts, nrm = np.asarray(clip.points[t], float), np.asarray(clip.normals[t], float)
            if pts.shape != nrm.shape or pts.shape[1:] != (3,):
                raise ValueError("clip frame %d: points and normals must both be n x 3" % t)
            f.write("frame %d %d %d\n" % (t, len(pts), clip.labels[t] if clip.labels else -1))
            _rows(f, np.hstack([pts, nrm]))


def write_generation_dataset(root, train, val, test):
    os.makedirs(root, exist_ok=True)
    for name, items in (("train", train), ("val", val), ("test", test)):
        write_motion_file(os.path.join(root, name + ".motion"), items)


def write_perception_dataset(root, train, val, test):
    for name, clips in (("train", train), ("val", val), ("test", test)):
        os.makedirs(os.path.join(root, name), exist_ok=True)
        for i, clip in enumerate(clips):
            write_clip_file(os.path.join(root, name, "clip_%04d.clip" % i), clip)


def estimate_normals(points, k=10):
    """PCA normals from the k nearest neighbours, for scans that ship without them."""
    pts = np.asarray(points, float)
    d = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
    out = np.empty_like(pts)
    for i, nbrs in enumerate(np.argsort(d, axis=1)[:, : min(k, len(pts))]):
        q = pts[nbrs] - pts[nbrs].mean(0)
        out[i] = np.linalg.svd(q, full_matrices=False)[2][-1]
    return out


# Real datasets. Loading their files is left to the caller; these stubs fix
# how their fields map onto the layouts above.

def core4d_item(person_a_joints, person_b_joints, object_translation, object_rotvec, object_vertices, label,
                n_geometry=1024, seed=0):
    """Two-person object rearrangement sequence to a MotionItem.

    person_a_joints / person_b_joints: T x J x 3 joint positions (e.g. from the
    SMPL-X fits), flattened to T x 3J; person A leads, person B is generated.
    object_translation: T x 3, object_rotvec: T x 3 axis-angle, concatenated
    into a T x 6 object pose. object_vertices: canonical mesh vertices,
    subsampled to n_geometry surface points. Set data.pose_dim = 3J and
    data.object_pose_dim = 6 in the run config.
    """
    a = np.asarray(person_a_joints, float)
    b = np.asarray(person_b_joints, float)
    verts = np.asarray(object_vertices, float)
    idx = np.random.default_rng(seed).choice(len(verts), size=min(n_geometry, len(verts)), replace=False)
    return MotionItem(actor=a.reshape(len(a), -1), reactor=b.reshape(len(b), -1),
                      object_pose=np.hstack([object_translation, object_rotvec]), geometry=verts[np.sort(idx)],
                      label=int(label))


def hoi4d_clip(frame_points, frame_labels, frame_normals=None, n_points=2048, seed=0):
    """Egocentric point cloud video with per-frame action labels to a Clip.

    frame_points: T arrays of n_t x 3 (camera frame, after depth
    back-projection and optional background removal); each is subsampled to
    n_points. frame_labels: T action ids in [0, K). Normals are estimated when
    the scan does not provide them.
    """
    rng = np.random.default_rng(seed)
    points, normals = [], []
    for t, p in enumerate(frame_points):
        p = np.asarray(p, float)
        idx = np.sort(rng.choice(len(p), size=min(n_points, len(p)), replace=False))
        points.append(p[idx])
        normals.append(estimate_normals(p[idx]) if frame_normals is None else np.asarray(frame_normals[t], float)[idx])
    return Clip(points=points, normals=normals, labels=[int(x) for x in frame_labels])
