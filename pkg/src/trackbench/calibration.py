"""Extrinsic calibration: recover the fixed transform X from the mocap rigid-
body frame to the device frame, jointly with the world alignment Y between the
mocap world and the device's own world origin (its boot pose), from one
synchronized trajectory pair related by  est_t ≈ Y ∘ gt_t ∘ X.

Each iteration alternates closed-form sub-solves and ends with a guarded
Gauss-Newton polish of the translation system:

  (i)   X starts at identity;
  (ii)  given X, fit Y by rigid point alignment of the translations of gt∘X
        onto the estimate;
  (iii) given Y, set X's rotation to the chordal mean of R_gt,tᵀ R_Yᵀ R_est,t
        and solve the translation normal equations of
        R_Y R_gt,t t_X + t_Y = t_est,t − R_Y t_gt,t for (t_X, t_Y) jointly;
  (iv)  Gauss-Newton steps on (R_Y, t_Y, t_X), accepted only when the
        translation residual does not increase.

Steps (ii)-(iv) each minimize the same translation objective over a block of
variables, so the residual is non-increasing across iterations; (iv) turns the
linear tail of the plain alternation into quadratic convergence.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InsufficientDataError,
    InsufficientExcitationError,
    NoOverlapError,
)
from .geometry import (
    Pose,
    Trajectory,
    UnitQuaternion,
    align_point_sets,
    quat_angle,
    quat_conjugate,
    quat_from_rotvec,
    quat_mean,
    quat_multiply,
    quat_rotate,
    transform_trajectory,
)

__all__ = ["ExtrinsicResult", "calibrate_extrinsic", "apply_extrinsic",
           "save_extrinsic", "load_extrinsic"]

MIN_ROTATION_SPREAD = math.radians(10.0)


@dataclass
class ExtrinsicResult:
    """Calibration output: extrinsic X (rigid body -> device frame), world
    alignment Y (mocap world -> device world), and fit residuals."""

    extrinsic: Pose
    world_alignment: Pose
    residual_rmse: float
    rotation_residual_rms: float
    iterations: int
    converged: bool
    n_pairs: int
    residual_history: list[float] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        def pose_record(p: Pose):
            # pose-CSV column order with the timestamp slot zeroed
            q = p.rotation
            t = p.translation
            return [0.0, t[0], t[1], t[2], q.x, q.y, q.z, q.w]

        return {
            "extrinsic": pose_record(self.extrinsic),
            "world_alignment": pose_record(self.world_alignment),
            "residual_rmse": self.residual_rmse,
            "rotation_residual_rms": self.rotation_residual_rms,
            "iterations": self.iterations,
            "converged": self.converged,
            "n_pairs": self.n_pairs,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExtrinsicResult":
        def parse_pose(rec):
            rec = list(map(float, rec))
            if len(rec) == 8:
                rec = rec[1:]
            if len(rec) != 7:
                raise ValueError("pose record must have 7 or 8 fields")
            return Pose(UnitQuaternion(rec[3], rec[4], rec[5], rec[6]), rec[0:3])

        return cls(
            extrinsic=parse_pose(d["extrinsic"]),
            world_alignment=parse_pose(d["world_alignment"]),
            residual_rmse=float(d["residual_rmse"]),
            rotation_residual_rms=float(d["rotation_residual_rms"]),
            iterations=int(d["iterations"]),
            converged=bool(d["converged"]),
            n_pairs=int(d.get("n_pairs", 0)),
        )


def save_extrinsic(result: ExtrinsicResult, path) -> None:
    path = os.fspath(path)
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(result.to_dict(), f, indent=2)
        f.write("\n")
    os.replace(tmp, path)


def load_extrinsic(path) -> ExtrinsicResult:
    with open(path, "r", encoding="utf-8") as f:
        return ExtrinsicResult.from_dict(json.load(f))


def _rotation_spread(quats) -> float:
    """Largest pairwise geodesic angle, subsampled for large inputs."""
    stride = max(1, quats.shape[0] // 512)
    q = quats[::stride]
    dots = np.abs(q @ q.T)
    return float(np.max(2.0 * np.arccos(np.clip(dots, -1.0, 1.0))))


def _associate(gt: Trajectory, est: Trajectory):
    lo = max(gt.start_time, est.start_time)
    hi = min(gt.end_time, est.end_time)
    if lo >= hi:
        raise NoOverlapError("trajectory time spans are disjoint")
    mask = (est.times >= lo) & (est.times <= hi)
    ts = est.times[mask]
    gq, gt_t = gt.interp_arrays(ts)
    return gq, gt_t, est.quaternions[mask], est.translations[mask]


def _skew_stack(v):
    """Stack of cross-product matrices [v_t]x, shape (n, 3, 3)."""
    n = v.shape[0]
    s = np.zeros((n, 3, 3))
    s[:, 0, 1] = -v[:, 2]
    s[:, 0, 2] = v[:, 1]
    s[:, 1, 0] = v[:, 2]
    s[:, 1, 2] = -v[:, 0]
    s[:, 2, 0] = -v[:, 1]
    s[:, 2, 1] = v[:, 0]
    return s


class _Solver:
    """One calibration problem over associated pose arrays."""

    def __init__(self, gq, gt_t, eq, et):
        self.gq = gq
        self.gt_t = gt_t
        self.eq = eq
        self.et = et
        self.n = gt_t.shape[0]
        # ground-truth rotation matrices, rows of columns: (n, 3, 3)
        self.rg = np.stack([quat_rotate(gq, np.eye(3)[i]) for i in range(3)], axis=2)

    @staticmethod
    def _rotm(q):
        return quat_rotate(np.asarray(q), np.eye(3)).T

    def residuals(self, qy, ty, tx):
        return quat_rotate(qy[None, :], self.gt_t + quat_rotate(self.gq, tx)) + ty - self.et

    def _mean_square(self, qy, ty, tx) -> float:
        r = self.residuals(qy, ty, tx)
        return float(np.mean(np.sum(r * r, axis=1)))

    def _solve_x_rotation(self, qy):
        cand = quat_multiply(quat_conjugate(self.gq),
                             quat_multiply(quat_conjugate(qy)[None, :], self.eq))
        return quat_mean(cand)

    def _solve_translations(self, qy):
        """Joint least squares for (t_X, t_Y) given the Y rotation."""
        ry = self._rotm(qy)
        g = np.einsum("ij,njk->nik", ry, self.rg)
        b = self.et - self.gt_t @ ry.T
        m = g.mean(axis=0)
        gtb = np.einsum("nij,ni->j", g, b) / self.n
        bbar = b.mean(axis=0)
        tx = np.linalg.lstsq(np.eye(3) - m.T @ m, gtb - m.T @ bbar, rcond=None)[0]
        return tx, bbar - m @ tx

    def _gauss_newton(self, qy, ty, tx, inner: int = 2):
        """Polish (R_Y, t_Y, t_X) on the translation residuals; steps are
        accepted only if the mean-square residual does not increase."""
        cur = self._mean_square(qy, ty, tx)
        for _ in range(inner):
            ry = self._rotm(qy)
            g = np.einsum("ij,njk->nik", ry, self.rg)
            v = (self.gt_t + quat_rotate(self.gq, tx)) @ ry.T
            r = self.residuals(qy, ty, tx)
            sk = _skew_stack(v)
            a = np.zeros((9, 9))
            vv = np.einsum("ni,nj->ij", v, v)
            a[0:3, 0:3] = np.trace(vv) * np.eye(3) - vv
            a[0:3, 3:6] = sk.sum(axis=0)
            a[3:6, 0:3] = a[0:3, 3:6].T
            a[0:3, 6:9] = np.einsum("nij,njk->ik", sk, g)
            a[6:9, 0:3] = a[0:3, 6:9].T
            a[3:6, 3:6] = self.n * np.eye(3)
            a[3:6, 6:9] = g.sum(axis=0)
            a[6:9, 3:6] = a[3:6, 6:9].T
            a[6:9, 6:9] = self.n * np.eye(3)
            grad = np.concatenate([np.cross(v, r).sum(axis=0), r.sum(axis=0),
                                   np.einsum("nij,ni->j", g, r)])
            delta = np.linalg.lstsq(a, -grad, rcond=None)[0]
            qy_new = quat_multiply(quat_from_rotvec(delta[0:3]), qy)
            ty_new = ty + delta[3:6]
            tx_new = tx + delta[6:9]
            new = self._mean_square(qy_new, ty_new, tx_new)
            if new <= cur + 1e-18:
                qy, ty, tx, cur = qy_new, ty_new, tx_new, new
            else:
                break
        return qy, ty, tx

    def run(self, max_iterations: int, tol: float):
        qx = np.array([0.0, 0.0, 0.0, 1.0])
        tx = np.zeros(3)
        qy = np.array([0.0, 0.0, 0.0, 1.0])
        ty = np.zeros(3)
        history = []
        iterations = 0
        converged = False
        for iterations in range(1, max_iterations + 1):
            qx_p, tx_p, qy_p, ty_p = qx, tx, qy, ty
            y = align_point_sets(self.et, self.gt_t + quat_rotate(self.gq, tx))
            qy = y.rotation.as_array()
            qx = self._solve_x_rotation(qy)
            tx, ty = self._solve_translations(qy)
            qy, ty, tx = self._gauss_newton(qy, ty, tx)
            qx = self._solve_x_rotation(qy)
            history.append(math.sqrt(self._mean_square(qy, ty, tx)))
            step = max(
                float(quat_angle(qx_p, qx)),
                float(quat_angle(qy_p, qy)),
                float(np.linalg.norm(tx_p - tx)),
                float(np.linalg.norm(ty_p - ty)),
            )
            if step < tol:
                converged = True
                break
        return qx, tx, qy, ty, history, iterations, converged


def calibrate_extrinsic(gt: Trajectory, est: Trajectory, *,
                        max_iterations: int = 100, tol: float = 1e-9,
                        min_pairs: int = 50,
                        min_rotation_spread: float = MIN_ROTATION_SPREAD,
                        trim_fraction: float = 0.0) -> ExtrinsicResult:
    """Recover (X, Y) from a synchronized trajectory pair.

    gt is the mocap stream (denser; interpolated at the estimate timestamps),
    est the device stream. Requires at least `min_pairs` associated pairs and
    rotational excitation (max pairwise geodesic angle among gt rotations) of
    at least `min_rotation_spread`, below which the lever arm is unobservable.
    Set `trim_fraction` > 0 for one re-fit pass that drops the worst residual
    pairs after convergence; useful on real logs with tracking glitches.
    """
    if not 0.0 <= trim_fraction < 0.5:
        raise ValueError("trim_fraction must be in [0, 0.5)")
    gq, gt_t, eq, et = _associate(gt, est)
    n = gt_t.shape[0]
    if n < min_pairs:
        raise InsufficientDataError(f"only {n} associated pairs; need {min_pairs}")
    spread = _rotation_spread(gq)
    if spread < min_rotation_spread:
        raise InsufficientExcitationError(
            f"rotation spread {math.degrees(spread):.2f} deg below "
            f"{math.degrees(min_rotation_spread):.2f} deg"
        )

    solver = _Solver(gq, gt_t, eq, et)
    qx, tx, qy, ty, history, iterations, converged = solver.run(max_iterations, tol)

    if trim_fraction > 0.0 and n >= 2 * min_pairs:
        errs = np.linalg.norm(solver.residuals(qy, ty, tx), axis=1)
        keep = np.sort(np.argsort(errs)[: n - int(math.ceil(trim_fraction * n))])
        solver = _Solver(gq[keep], gt_t[keep], eq[keep], et[keep])
        qx, tx, qy, ty, hist2, it2, converged = solver.run(max_iterations, tol)
        history += hist2
        iterations += it2

    errs = np.linalg.norm(solver.residuals(qy, ty, tx), axis=1)
    pred_q = quat_multiply(qy[None, :], quat_multiply(solver.gq, qx[None, :]))
    rot_errs = quat_angle(pred_q, solver.eq)
    return ExtrinsicResult(
        extrinsic=Pose(UnitQuaternion.from_array(qx), tx),
        world_alignment=Pose(UnitQuaternion.from_array(qy), ty),
        residual_rmse=float(np.sqrt(np.mean(errs ** 2))),
        rotation_residual_rms=float(np.sqrt(np.mean(rot_errs ** 2))),
        iterations=iterations,
        converged=converged,
        n_pairs=int(solver.n),
        residual_history=history,
    )


def apply_extrinsic(traj: Trajectory, extrinsic: Pose,
                    body_frame: str = "H") -> Trajectory:
    """Right-compose every pose with the extrinsic, relabeling the body frame.

    Turns rigid-body ground truth into device-center ground truth.
    """
    return transform_trajectory(
        traj, post=extrinsic, frames=(traj.frames[0], body_frame)
    )
