"""Planar rigid-body kinematics and dynamics for the floating-base leg.

Every operation is a pure function of its arguments and broadcasts over
leading batch dimensions: ``q`` may be shaped ``(n,)`` or ``(..., n)``.
Batch support is what lets the transcription evaluate a whole knot
trajectory in one call.

Internally the inverse dynamics runs a recursive Newton-Euler pass over
planar spatial vectors ``(omega, vx, vz)`` for motion and
``(moment, fx, fz)`` for force, expressed in body frames.  The mass
matrix is assembled from body CoM Jacobians (kinetic-energy form), which
keeps it symmetric positive definite by construction and gives the unit
acceleration identity ``H e_i = ID(q, 0, e_i) - ID(q, 0, 0)`` a genuinely
independent path to cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .model import LegModel, LinkParams

_MASSLESS = LinkParams(0.0, (0.0, 0.0), 0.0)


@dataclass(frozen=True)
class _Joint:
    kind: str              # 'rev' | 'px' | 'pz'
    offset: tuple[float, float]   # joint location in the parent frame
    body: LinkParams       # body carried by this joint


def _chain(model: LegModel) -> list[_Joint]:
    hip = _Joint("rev", (0.0, 0.0), model.upper)
    knee = _Joint("rev", (0.0, -model.l1), model.lower)
    if model.base_mode == "slider":
        return [_Joint("pz", (0.0, 0.0), model.trunk), hip, knee]
    return [
        _Joint("px", (0.0, 0.0), _MASSLESS),
        _Joint("pz", (0.0, 0.0), _MASSLESS),
        _Joint("rev", (0.0, 0.0), model.trunk),
        hip,
        knee,
    ]


_AXES = {"px": np.array([1.0, 0.0]), "pz": np.array([0.0, 1.0])}


# -- planar vector helpers ---------------------------------------------------

def _perp(p):
    """90 degree counterclockwise rotation: (x, z) -> (-z, x)."""
    return np.stack([-p[..., 1], p[..., 0]], axis=-1)


def _cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _rotv(theta, v):
    """Rotate vector(s) v by angle(s) theta (counterclockwise)."""
    c, s = np.cos(theta), np.sin(theta)
    return np.stack([c * v[..., 0] - s * v[..., 1],
                     s * v[..., 0] + c * v[..., 1]], axis=-1)


def _rotv_t(theta, v):
    c, s = np.cos(theta), np.sin(theta)
    return np.stack([c * v[..., 0] + s * v[..., 1],
                     -s * v[..., 0] + c * v[..., 1]], axis=-1)


# -- world kinematics --------------------------------------------------------

def _kin_pass(model: LegModel, q: np.ndarray):
    """Walk the chain, returning world-frame joint and body quantities.

    Returns a dict of per-joint lists: 'anchor' (revolute pivot point or
    None), 'axis' (world prismatic axis or None), 'body_theta',
    'body_com', plus 'foot' and 'foot_theta'.
    """
    q = model.check_q(q)
    batch = q.shape[:-1]
    theta = np.zeros(batch)
    origin = np.zeros(batch + (2,))
    anchors, axes, body_thetas, body_coms = [], [], [], []
    for j, joint in enumerate(_chain(model)):
        off = np.asarray(joint.offset)
        if np.any(off):
            origin = origin + _rotv(theta, np.broadcast_to(off, batch + (2,)))
        if joint.kind == "rev":
            anchors.append(origin)
            axes.append(None)
            theta = theta + q[..., j]
        else:
            axis_w = _rotv(theta, np.broadcast_to(_AXES[joint.kind], batch + (2,)))
            origin = origin + axis_w * q[..., j][..., None]
            anchors.append(None)
            axes.append(axis_w)
        body_thetas.append(theta)
        com_off = np.asarray(joint.body.com)
        com_w = origin
        if np.any(com_off):
            com_w = origin + _rotv(theta, np.broadcast_to(com_off, batch + (2,)))
        body_coms.append(com_w)
    foot = origin + _rotv(theta, np.broadcast_to(np.array([0.0, -model.l2]),
                                                 batch + (2,)))
    return {
        "anchors": anchors,
        "axes": axes,
        "body_thetas": body_thetas,
        "body_coms": body_coms,
        "foot": foot,
        "batch": batch,
    }


def _point_jacobian(model, kin, point, upto=None):
    """Jacobian of a world point rigidly attached to body ``upto``
    (default: last body).  Shape (..., 2, n)."""
    n = model.n
    upto = n - 1 if upto is None else upto
    batch = kin["batch"]
    J = np.zeros(batch + (2, n))
    for j, joint in enumerate(_chain(model)):
        if j > upto:
            break
        if joint.kind == "rev":
            J[..., :, j] = _perp(point - kin["anchors"][j])
        else:
            J[..., :, j] = kin["axes"][j]
    return J


def _omega_row(model, upto):
    row = np.zeros(model.n)
    for j, joint in enumerate(_chain(model)):
        if j > upto:
            break
        if joint.kind == "rev":
            row[j] = 1.0
    return row


# -- public kinematics -------------------------------------------------------

def forward_kinematics(model: LegModel, q) -> np.ndarray:
    """World position of the foot, shape (..., 2)."""
    return _kin_pass(model, q)["foot"]


def foot_jacobian(model: LegModel, q) -> np.ndarray:
    """d(foot)/dq, shape (..., 2, n), partitioned [J_base | J_joints]."""
    kin = _kin_pass(model, q)
    return _point_jacobian(model, kin, kin["foot"])


def foot_velocity(model: LegModel, q, qd) -> np.ndarray:
    qd = model.check_q(qd, "qd")
    J = foot_jacobian(model, q)
    return np.einsum("...ij,...j->...i", J, qd)


def com_position(model: LegModel, q) -> np.ndarray:
    """Whole-body CoM in world coordinates, shape (..., 2)."""
    kin = _kin_pass(model, q)
    total = None
    for joint, com in zip(_chain(model), kin["body_coms"]):
        contrib = joint.body.mass * com
        total = contrib if total is None else total + contrib
    return total / model.total_mass


def com_velocity(model: LegModel, q, qd) -> np.ndarray:
    qd = model.check_q(qd, "qd")
    A = centroidal_momentum_matrix(model, q)
    return np.einsum("...ij,...j->...i", A[..., :2, :], qd) / model.total_mass


def centroidal_momentum_matrix(model: LegModel, q) -> np.ndarray:
    """Map from generalized velocity to (linear x, linear z, angular)
    momentum about the CoM.  Shape (..., 3, n)."""
    kin = _kin_pass(model, q)
    n = model.n
    batch = kin["batch"]
    A_lin = np.zeros(batch + (2, n))
    A_ang = np.zeros(batch + (n,))
    body_J = []
    for i, joint in enumerate(_chain(model)):
        Jc = _point_jacobian(model, kin, kin["body_coms"][i], upto=i)
        body_J.append(Jc)
        A_lin = A_lin + joint.body.mass * Jc
        A_ang = A_ang + joint.body.inertia * _omega_row(model, i)
    r = sum(joint.body.mass * com
            for joint, com in zip(_chain(model), kin["body_coms"])) / model.total_mass
    for i, joint in enumerate(_chain(model)):
        if joint.body.mass == 0.0:
            continue
        d = kin["body_coms"][i] - r
        Jc = body_J[i]
        # cross2(d, Jc qd) per column
        A_ang = A_ang + joint.body.mass * (
            d[..., 0, None] * Jc[..., 1, :] - d[..., 1, None] * Jc[..., 0, :])
    return np.concatenate([A_lin, A_ang[..., None, :]], axis=-2)


def mass_matrix(model: LegModel, q) -> np.ndarray:
    """Joint-space inertia matrix H(q), shape (..., n, n)."""
    kin = _kin_pass(model, q)
    n = model.n
    H = np.zeros(kin["batch"] + (n, n))
    for i, joint in enumerate(_chain(model)):
        if joint.body.mass == 0.0 and joint.body.inertia == 0.0:
            continue
        Jc = _point_jacobian(model, kin, kin["body_coms"][i], upto=i)
        H = H + joint.body.mass * np.einsum("...ki,...kj->...ij", Jc, Jc)
        w = _omega_row(model, i)
        H = H + joint.body.inertia * np.multiply.outer(w, w)
    return H


# -- inverse dynamics (planar spatial RNEA) ----------------------------------

def _joint_pose(joint, qj):
    """Child frame pose (theta_rel, p_rel) in parent coordinates."""
    off = np.asarray(joint.offset)
    if joint.kind == "rev":
        p = np.broadcast_to(off, qj.shape + (2,))
        return qj, p
    axis = _AXES[joint.kind]
    p = off + np.multiply.outer(qj, axis)
    return np.zeros_like(qj), p


def _xm(theta, p, v):
    """Transform a motion vector from parent to child coordinates."""
    w = v[..., 0]
    lin = v[..., 1:] + w[..., None] * _perp(p)
    return np.concatenate([w[..., None], _rotv_t(theta, lin)], axis=-1)


def _xf_to_parent(theta, p, f):
    """Transform a force vector from child to parent coordinates."""
    F = _rotv(theta, f[..., 1:])
    n = f[..., 0] + _cross2(p, F)
    return np.concatenate([n[..., None], F], axis=-1)


def _crm(v, m):
    """Motion-cross-motion product."""
    lin = v[..., 0][..., None] * _perp(m[..., 1:]) - \
        m[..., 0][..., None] * _perp(v[..., 1:])
    return np.concatenate([np.zeros_like(v[..., :1]), lin], axis=-1)


def _crf(v, f):
    """Motion-cross-force product."""
    n = _cross2(v[..., 1:], f[..., 1:])
    lin = v[..., 0][..., None] * _perp(f[..., 1:])
    return np.concatenate([n[..., None], lin], axis=-1)


def _inertia_apply(body: LinkParams, v):
    """Spatial momentum of a body with velocity v (body coordinates)."""
    c = np.asarray(body.com)
    w = v[..., 0]
    u = v[..., 1:]
    i_origin = body.inertia + body.mass * float(c @ c)
    h_ang = i_origin * w + body.mass * (c[0] * u[..., 1] - c[1] * u[..., 0])
    h_lin = body.mass * u + body.mass * w[..., None] * _perp(
        np.broadcast_to(c, u.shape))
    return np.concatenate([h_ang[..., None], h_lin], axis=-1)


def _joint_subspace(joint, batch):
    if joint.kind == "rev":
        s = np.array([1.0, 0.0, 0.0])
    else:
        s = np.concatenate([[0.0], _AXES[joint.kind]])
    return np.broadcast_to(s, batch + (3,))


def _rnea(model: LegModel, q, qd, qdd):
    """H(q) qdd + c(q, qd) including gravity; shape (..., n)."""
    q = model.check_q(q)
    qd = model.check_q(qd, "qd")
    qdd = model.check_q(qdd, "qdd")
    batch = np.broadcast_shapes(q.shape[:-1], qd.shape[:-1], qdd.shape[:-1])
    chain = _chain(model)
    v = np.zeros(batch + (3,))
    a = np.zeros(batch + (3,))
    a[..., 2] = model.gravity  # fictitious upward base acceleration
    poses, forces, subspaces = [], [], []
    for j, joint in enumerate(chain):
        th, p = _joint_pose(joint, np.broadcast_to(q[..., j], batch))
        S = _joint_subspace(joint, batch)
        vj = S * np.broadcast_to(qd[..., j], batch)[..., None]
        v = _xm(th, p, v) + vj
        a = _xm(th, p, a) + S * np.broadcast_to(qdd[..., j], batch)[..., None] \
            + _crm(v, vj)
        f = _inertia_apply(joint.body, a) + _crf(v, _inertia_apply(joint.body, v))
        poses.append((th, p))
        forces.append(f)
        subspaces.append(S)
    tau = np.zeros(batch + (model.n,))
    f_acc = None
    for j in range(len(chain) - 1, -1, -1):
        f_acc = forces[j] if f_acc is None else forces[j] + f_acc
        tau[..., j] = np.einsum("...i,...i->...", subspaces[j], f_acc)
        if j > 0:
            th, p = poses[j]
            f_acc = _xf_to_parent(th, p, f_acc)
    return tau


def inverse_dynamics(model: LegModel, q, qd, qdd, contact_force=None) -> np.ndarray:
    """Generalized force b = H(q) qdd + c(q, qd) - J^T lambda.

    ``contact_force`` is the planar foot force (tangential, normal) in
    world coordinates; omit it (or pass None) for the unloaded case.
    """
    b = _rnea(model, q, qd, qdd)
    if contact_force is not None:
        lam = np.asarray(contact_force, dtype=float)
        if lam.shape[-1] != 2:
            raise DimensionError(
                f"contact force has trailing dimension {lam.shape[-1]}, expected 2")
        J = foot_jacobian(model, q)
        b = b - np.einsum("...ij,...i->...j", J, lam)
    return b


def bias_forces(model: LegModel, q, qd) -> np.ndarray:
    """Coriolis, centrifugal and gravity forces c(q, qd)."""
    return inverse_dynamics(model, q, qd, np.zeros_like(model.check_q(q)))


def actuation_matrix(model: LegModel) -> np.ndarray:
    """Selection matrix B mapping joint efforts into generalized forces;
    floating-base rows are zero."""
    B = np.zeros((model.n, model.n_q))
    B[model.n_b:, :] = np.eye(model.n_q)
    return B


# -- energy and simulation (test and verification support) -------------------

def kinetic_energy(model: LegModel, q, qd) -> np.ndarray:
    qd = model.check_q(qd, "qd")
    H = mass_matrix(model, q)
    return 0.5 * np.einsum("...i,...ij,...j->...", qd, H, qd)


def potential_energy(model: LegModel, q) -> np.ndarray:
    return model.total_mass * model.gravity * com_position(model, q)[..., 1]


def total_energy(model: LegModel, q, qd) -> np.ndarray:
    return kinetic_energy(model, q, qd) + potential_energy(model, q)


def forward_dynamics(model: LegModel, q, qd, tau=None, contact_force=None):
    """Joint accelerations from efforts and foot force."""
    rhs = -bias_forces(model, q, qd)
    if tau is not None:
        rhs = rhs + actuation_matrix(model) @ np.asarray(tau, dtype=float)
    if contact_force is not None:
        J = foot_jacobian(model, q)
        rhs = rhs + np.einsum("...ij,...i->...j", J, np.asarray(contact_force))
    return np.linalg.solve(mass_matrix(model, q), rhs)


def simulate(model: LegModel, q0, qd0, duration, dt,
             tau_fn=None, contact_fn=None):
    """Fixed-step RK4 roll-out; returns (times, Q, Qd) arrays.

    ``tau_fn(t, q, qd)`` and ``contact_fn(t, q, qd)`` supply efforts and
    foot forces; None means zero.  Uses the scalar fast path internally
    (see below); a test pins it against the array implementation.
    """
    steps = int(round(duration / dt))
    n = model.n
    Q = np.zeros((steps + 1, n))
    Qd = np.zeros((steps + 1, n))
    Q[0], Qd[0] = q0, qd0
    times = np.arange(steps + 1) * dt

    def deriv(t, q, qd):
        tau = tau_fn(t, q, qd) if tau_fn is not None else None
        lam = contact_fn(t, q, qd) if contact_fn is not None else None
        return qd, scalar_forward_dynamics(model, q, qd, tau, lam)

    for k in range(steps):
        t, q, qd = times[k], Q[k], Qd[k]
        k1q, k1v = deriv(t, q, qd)
        k2q, k2v = deriv(t + dt / 2, q + dt / 2 * k1q, qd + dt / 2 * k1v)
        k3q, k3v = deriv(t + dt / 2, q + dt / 2 * k2q, qd + dt / 2 * k2v)
        k4q, k4v = deriv(t + dt, q + dt * k3q, qd + dt * k3v)
        Q[k + 1] = q + dt / 6 * (k1q + 2 * k2q + 2 * k3q + k4q)
        Qd[k + 1] = qd + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
    return times, Q, Qd


# -- scalar fast path ---------------------------------------------------------
# numpy overhead dominates single-state calls (the chain has at most five
# joints), which makes fine-step RK4 roll-outs painfully slow.  The walk
# below repeats the kinematics with plain floats; it exists purely for
# simulation speed and is pinned to the array implementation by tests.

import math as _math
from functools import lru_cache as _lru_cache


@_lru_cache(maxsize=None)
def _scalar_chain(model: LegModel):
    out = []
    for joint in _chain(model):
        ax = _AXES[joint.kind] if joint.kind != "rev" else None
        out.append((joint.kind, joint.offset[0], joint.offset[1],
                    None if ax is None else (ax[0], ax[1]),
                    joint.body.mass, joint.body.com[0], joint.body.com[1],
                    joint.body.inertia))
    return tuple(out)


def scalar_forward_dynamics(model: LegModel, q, qd, tau=None, contact_force=None):
    """Joint accelerations for a single state, float arithmetic throughout."""
    n = model.n
    chain = _scalar_chain(model)
    q = [float(v) for v in q]
    qd = [float(v) for v in qd]

    theta = 0.0
    ox = oz = 0.0
    # per joint: world anchor / axis; per body: world CoM, cos/sin
    cols = []           # jacobian column generators: ('rev', ax, az) anchor or ('pri', ux, uz)
    body_com = []
    body_theta = []
    for kind, offx, offz, axis, m_b, cx, cz, i_b in chain:
        c, s = _math.cos(theta), _math.sin(theta)
        ox += c * offx - s * offz
        oz += s * offx + c * offz
        if kind == "rev":
            cols.append(("rev", ox, oz))
            theta += q[len(cols) - 1]
            c, s = _math.cos(theta), _math.sin(theta)
        else:
            ux, uz = axis
            uxw, uzw = c * ux - s * uz, s * ux + c * uz
            qj = q[len(cols)]
            ox += uxw * qj
            oz += uzw * qj
            cols.append(("pri", uxw, uzw))
        body_com.append((ox + c * cx - s * cz, oz + s * cx + c * cz))
        body_theta.append(theta)

    # mass matrix and gravity/bias assembled from body jacobians
    H = [[0.0] * n for _ in range(n)]
    Jc_all = []
    for i, (kind, offx, offz, axis, m_b, cx, cz, i_b) in enumerate(chain):
        px, pz = body_com[i]
        Jx = [0.0] * n
        Jz = [0.0] * n
        Jw = [0.0] * n
        for j in range(i + 1):
            kj = cols[j]
            if kj[0] == "rev":
                Jx[j] = -(pz - kj[2])
                Jz[j] = px - kj[1]
                Jw[j] = 1.0
            else:
                Jx[j] = kj[1]
                Jz[j] = kj[2]
        Jc_all.append((Jx, Jz, Jw))
        if m_b == 0.0 and i_b == 0.0:
            continue
        for a in range(n):
            ja_x, ja_z, ja_w = Jx[a], Jz[a], Jw[a]
            for b in range(a, n):
                H[a][b] += m_b * (ja_x * Jx[b] + ja_z * Jz[b]) + i_b * ja_w * Jw[b]
    for a in range(n):
        for b in range(a):
            H[a][b] = H[b][a]

    cvec = _scalar_bias(model, chain, cols, q, qd, n)

    rhs = [-cv for cv in cvec]
    if tau is not None:
        for j in range(model.n_q):
            rhs[model.n_b + j] += float(tau[j])
    if contact_force is not None:
        lx, lz = float(contact_force[0]), float(contact_force[1])
        if lx != 0.0 or lz != 0.0:
            c, s = _math.cos(body_theta[-1]), _math.sin(body_theta[-1])
            fx = ox + c * 0.0 - s * (-model.l2)
            fz = oz + s * 0.0 + c * (-model.l2)
            for j in range(n):
                kj = cols[j]
                if kj[0] == "rev":
                    rhs[j] += -(fz - kj[2]) * lx + (fx - kj[1]) * lz
                else:
                    rhs[j] += kj[1] * lx + kj[2] * lz
    return np.linalg.solve(np.array(H), np.array(rhs))


def _scalar_bias(model, chain, cols, q, qd, n):
    """c(q, qd): Newton-Euler recursion with float spatial coordinates."""
    g = model.gravity
    v = (0.0, 0.0, 0.0)
    a = (0.0, 0.0, g)
    poses, forces, subs = [], [], []
    for j, (kind, offx, offz, axis, m_b, cx, cz, i_b) in enumerate(chain):
        if kind == "rev":
            th = q[j]
            px, pz = offx, offz
            sw, sx, sz = 1.0, 0.0, 0.0
        else:
            th = 0.0
            px, pz = offx + axis[0] * q[j], offz + axis[1] * q[j]
            sw, sx, sz = 0.0, axis[0], axis[1]
        c, s = _math.cos(th), _math.sin(th)

        def xm(w, ux, uz):
            lx = ux - w * pz
            lz = uz + w * px
            return w, c * lx + s * lz, -s * lx + c * lz

        qdj = qd[j]
        vw, vx, vz = xm(*v)
        vw += sw * qdj
        vx += sx * qdj
        vz += sz * qdj
        aw, ax_, az_ = xm(*a)
        # crm(v) (S qd): (0, vw*perp(m) - mw*perp(v)) with m = S qd
        mx, mz = sx * qdj, sz * qdj
        ax_ += vw * (-mz) - sw * qdj * (-vz)
        az_ += vw * mx - sw * qdj * vx
        v = (vw, vx, vz)
        a = (aw, ax_, az_)
        # f = I a + crf(v)(I v)
        i_o = i_b + m_b * (cx * cx + cz * cz)
        haw = i_o * vw + m_b * (cx * vz - cz * vx)
        hax = m_b * vx + m_b * vw * (-cz)
        haz = m_b * vz + m_b * vw * cx
        fn = i_o * aw + m_b * (cx * az_ - cz * ax_)
        fx = m_b * ax_ + m_b * aw * (-cz)
        fz = m_b * az_ + m_b * aw * cx
        fn += vx * haz - vz * hax
        fx += vw * (-haz)
        fz += vw * hax
        poses.append((c, s, px, pz))
        forces.append([fn, fx, fz])
        subs.append((sw, sx, sz))
    cvec = [0.0] * n
    fn = fx = fz = 0.0
    for j in range(len(chain) - 1, -1, -1):
        fn += forces[j][0]
        fx += forces[j][1]
        fz += forces[j][2]
        sw, sx, sz = subs[j]
        cvec[j] = sw * fn + sx * fx + sz * fz
        if j > 0:
            c, s, px, pz = poses[j]
            gx = c * fx - s * fz
            gz = s * fx + c * fz
            fn = fn + px * gz - pz * gx
            fx, fz = gx, gz
    return cvec
