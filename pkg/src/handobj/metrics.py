"""Training objective and evaluation metrics.

Inputs are in metres; Chamfer distance is reported in cm^2, translation loss
and penetration depth in cm.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import torch

M_TO_CM = 100.0
CONTACT_EPS = 0.005
MIN_NORMAL_POINTS = 8


def _as_tensor(x) -> torch.Tensor:
    t = torch.as_tensor(x)
    return t if t.is_floating_point() else t.to(torch.float64)


def nearest_neighbors(a: torch.Tensor, b: torch.Tensor, chunk: int = 2048):
    """Squared distance and index of the nearest ``b`` row for every ``a`` row.

    Candidates come from the expansion ``|b|^2 - 2 a.b`` on centred inputs
    (one matmul per chunk).  Every candidate within the expansion's rounding
    bound of the best score is then rescored exactly from the coordinates,
    so the result equals a brute-force search, ties going to the smaller
    index.  Works on [..,Na,3] x [..,Nb,3].
    """
    if a.shape[-2] == 0 or b.shape[-2] == 0:
        raise ValueError("nearest-neighbour query on an empty point set")
    eps = torch.finfo(a.dtype).eps
    i_out = []
    with torch.no_grad():
        centre = b.mean(-2, keepdim=True)
        ac, bc = a - centre, b - centre
        b2 = (bc * bc).sum(-1).unsqueeze(-2)
        b2max = b2.amax(-1, keepdim=True)
        bt = bc.transpose(-1, -2)
        lead = a.shape[:-2]
        nb = b.shape[-2]
        for s in range(0, a.shape[-2], chunk):
            q = ac[..., s:s + chunk, :]
            nq = q.shape[-2]
            # |q|^2 is constant along each row, so it does not change the ranking
            score = torch.baddbmm(
                b2.reshape(-1, 1, nb),
                q.reshape(-1, nq, 3), bt.expand(*lead, 3, -1).reshape(-1, 3, nb), alpha=-2.0,
            ).reshape(*lead, nq, nb)
            qq = (q * q).sum(-1, keepdim=True)
            k = min(4, nb)
            while True:
                top, cand = torch.topk(score, k, dim=-1, largest=False)
                best = top[..., :1]
                slack = 16 * eps * (qq + b2max) + 4 * eps * best.abs()
                if k == nb or not (top[..., -1:] <= best + slack).any():
                    break
                k = min(2 * k, nb)
            pts = torch.gather(b, -2, cand.reshape(*lead, nq * k, 1).expand(*lead, nq * k, 3)).reshape(*lead, nq, k, 3)
            diff = a[..., s:s + chunk, None, :] - pts
            d2 = (diff * diff).sum(-1)
            d2 = torch.where(top <= best + slack, d2, torch.full_like(d2, float("inf")))
            tied = d2 == d2.amin(-1, keepdim=True)
            i_out.append(torch.where(tied, cand, torch.full_like(cand, nb)).amin(-1))
        idx = torch.cat(i_out, dim=-1)
        nearest = torch.gather(b, -2, idx.unsqueeze(-1).expand(*idx.shape, 3))
        diff = a - nearest
    return (diff * diff).sum(-1), idx


def _matched_sq_dist(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _, idx = nearest_neighbors(a.detach(), b.detach())
    matched = torch.gather(b, -2, idx.unsqueeze(-1).expand(*idx.shape, 3))
    diff = a - matched
    return (diff * diff).sum(-1)


def chamfer_distance(A, B) -> torch.Tensor:
    """Mean squared nearest-neighbour distance in each direction, summed (cm^2).

    Differentiable in both inputs; batched inputs give one value per sample.
    """
    A, B = _as_tensor(A), _as_tensor(B)
    if A.shape[-2] == 0 or B.shape[-2] == 0:
        raise ValueError("chamfer distance of an empty point set")
    A, B = A * M_TO_CM, B * M_TO_CM
    return _matched_sq_dist(A, B).mean(-1) + _matched_sq_dist(B, A).mean(-1)


def f_score(A, B, tau: float):
    """Harmonic-mean F-score at distance ``tau`` (metres); 0 when P + R = 0."""
    if tau <= 0:
        raise ValueError(f"F-score threshold must be positive, got {tau}")
    A, B = _as_tensor(A), _as_tensor(B)
    d_ab = nearest_neighbors(A, B)[0].sqrt()
    d_ba = nearest_neighbors(B, A)[0].sqrt()
    precision = (d_ab <= tau).to(torch.float64).mean(-1)
    recall = (d_ba <= tau).to(torch.float64).mean(-1)
    total = precision + recall
    safe = torch.where(total > 0, total, torch.ones_like(total))
    f = torch.where(total > 0, 2 * precision * recall / safe, torch.zeros_like(total))
    return f.item() if f.ndim == 0 else f


def in_contact(hand_vertices, obj_points, eps: float = CONTACT_EPS) -> bool:
    """True when some hand vertex is within ``eps`` (closed) of the object."""
    d2, _ = nearest_neighbors(_as_tensor(hand_vertices), _as_tensor(obj_points))
    return bool(d2.min().sqrt() <= eps)


def contact_ratio(flags) -> float:
    flags = np.asarray(flags, dtype=bool)
    if flags.size == 0:
        raise ValueError("contact ratio of an empty sample set")
    return float(flags.mean())


def penetration_depth_sdf(hand_vertices, sdf: Callable[[np.ndarray], np.ndarray]) -> float:
    """Deepest hand vertex inside an analytic SDF, in cm (0 without collision)."""
    d = np.asarray(sdf(np.asarray(hand_vertices, dtype=np.float64)))
    return float(max(0.0, float((-d).max())) * M_TO_CM)


def estimate_normals(cloud: torch.Tensor, at: torch.Tensor, k: int = 16) -> torch.Tensor:
    """Local-PCA normals of ``cloud`` at rows ``at``, oriented away from the cloud centroid."""
    k = min(k, cloud.shape[0])
    with torch.no_grad():
        diff = cloud[at][:, None, :] - cloud[None, :, :]
        d2 = (diff * diff).sum(-1)
        nbr = torch.sort(d2, dim=-1, stable=True).indices[:, :k]
        patch = cloud[nbr]
        centred = patch - patch.mean(1, keepdim=True)
        cov = centred.transpose(1, 2) @ centred
        _, vecs = torch.linalg.eigh(cov)
        normals = vecs[..., 0]
        outward = cloud[at] - cloud.mean(0)
        flip = (normals * outward).sum(-1) < 0
        return torch.where(flip[:, None], -normals, normals)


def penetration_depth_cloud(hand_vertices, cloud, k: int = 16) -> float:
    """Penetration depth (cm) against a point cloud using PCA normals.

    Each hand vertex is signed against its nearest cloud point's outward
    normal; the deepest negative distance is reported.
    """
    cloud = _as_tensor(cloud).to(torch.float64)
    hv = _as_tensor(hand_vertices).to(torch.float64)
    if cloud.shape[0] < MIN_NORMAL_POINTS:
        raise ValueError(f"need at least {MIN_NORMAL_POINTS} object points for normal estimation")
    _, idx = nearest_neighbors(hv, cloud)
    uniq, inverse = torch.unique(idx, return_inverse=True)
    normals = estimate_normals(cloud, uniq, k)[inverse]
    signed = ((hv - cloud[idx]) * normals).sum(-1)
    return float(max(0.0, float((-signed).max())) * M_TO_CM)


@dataclass
class LossWeights:
    pose: float = 2.0
    sparse: float = 2.0

    def __post_init__(self):
        if self.pose <= 0 or self.sparse <= 0:
            raise ValueError(f"loss weights must be positive, got {self.pose}, {self.sparse}")


def total_loss(pred: dict, target: dict, weights: Optional[LossWeights] = None):
    """``pose_w * L1(t_o) + sparse_w * CD(sparse) + CD(dense)``, averaged over the batch.

    ``pred`` and ``target`` hold ``t_o`` [B,3], ``sparse`` [B,Ns,3] and
    ``dense`` [B,Nd,3] in metres.  Returns the scalar and a dict of components.
    """
    weights = weights or LossWeights()
    for key in ("t_o", "sparse", "dense"):
        if pred[key].shape[0] != target[key].shape[0] or pred[key].shape[-1] != target[key].shape[-1]:
            raise ValueError(
                f"{key}: prediction shape {tuple(pred[key].shape)} incompatible with target {tuple(target[key].shape)}"
            )
    pose = ((pred["t_o"] - target["t_o"]).abs() * M_TO_CM).sum(-1).mean()
    cd_s = chamfer_distance(pred["sparse"], target["sparse"]).mean()
    cd_d = chamfer_distance(pred["dense"], target["dense"]).mean()
    loss = weights.pose * pose + weights.sparse * cd_s + cd_d
    return loss, {"pose": pose, "cd_sparse": cd_s, "cd_dense": cd_d}


@dataclass
class MetricsReport:
    sample_ids: list = field(default_factory=list)
    cd_cm2: list = field(default_factory=list)
    fs_at_5mm: list = field(default_factory=list)
    fs_at_10mm: list = field(default_factory=list)
    contact: list = field(default_factory=list)
    penetration_depth_cm: list = field(default_factory=list)
    hand_error_mm: list = field(default_factory=list)
    options: dict = field(default_factory=dict)

    SCHEMA_VERSION = 1
    COLUMNS = ("cd_cm2", "fs_at_5mm", "fs_at_10mm", "contact", "penetration_depth_cm", "hand_error_mm")

    def add(self, sample_id, cd, fs5, fs10, contact, pd, e_h):
        self.sample_ids.append(int(sample_id))
        self.cd_cm2.append(float(cd))
        self.fs_at_5mm.append(float(fs5))
        self.fs_at_10mm.append(float(fs10))
        self.contact.append(bool(contact))
        self.penetration_depth_cm.append(float(pd))
        self.hand_error_mm.append(float(e_h))

    def means(self) -> dict:
        m = {c: float(np.mean(getattr(self, c))) for c in self.COLUMNS}
        m["contact_ratio"] = m.pop("contact")
        return m

    def to_dict(self) -> dict:
        rows = [
            {"sample_id": sid, **{c: getattr(self, c)[i] for c in self.COLUMNS}}
            for i, sid in enumerate(self.sample_ids)
        ]
        return {"schema_version": self.SCHEMA_VERSION, "options": self.options, "samples": rows, "means": self.means()}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        if d.get("schema_version") != cls.SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema version {d.get('schema_version')}")
        rep = cls(options=d.get("options", {}))
        for row in d["samples"]:
            rep.add(row["sample_id"], *(row[c] for c in cls.COLUMNS))
        return rep
