"""Compiled kernels for the planar rigid-body propagator.

Private module: everything here operates on flat numpy arrays so numba can
compile the full stepping loop (integration, contact detection, sequential
impulses, positional correction). The public API lives in physics.py.

Conventions:
  pose rows are (x, y, theta); velocity rows are (vx, vy, omega).
  Contact normals point from body a to body b.
  Shape kind 0 = disk (sa = radius), kind 1 = box (sa, sb = half extents).
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

TWO_PI = 2.0 * math.pi
SLOP = 1.0e-4  # penetration allowance before positional correction (m)


@njit(cache=True)
def wrap_angle(theta):
    if theta > math.pi or theta <= -math.pi:
        r = theta % TWO_PI
        if r > math.pi:
            r -= TWO_PI
        return r
    return theta


@njit(cache=True)
def _collide_disk_box(dx, dy, r, bx, by, bth, hx, hy):
    """Disk vs oriented box. Returned normal points from the box to the disk.

    Returns (hit, px, py, nx, ny, depth) with the contact point on the box
    surface, in world coordinates.
    """
    c = math.cos(bth)
    s = math.sin(bth)
    lx = c * (dx - bx) + s * (dy - by)
    ly = -s * (dx - bx) + c * (dy - by)
    cx = min(max(lx, -hx), hx)
    cy = min(max(ly, -hy), hy)
    if cx == lx and cy == ly:
        # disk center inside the box: exit through the nearest face
        fx = hx - abs(lx)
        fy = hy - abs(ly)
        if fx < fy:
            lnx = 1.0 if lx >= 0.0 else -1.0
            lny = 0.0
            depth = r + fx
            cx = hx if lx >= 0.0 else -hx
        else:
            lnx = 0.0
            lny = 1.0 if ly >= 0.0 else -1.0
            depth = r + fy
            cy = hy if ly >= 0.0 else -hy
    else:
        ddx = lx - cx
        ddy = ly - cy
        d2 = ddx * ddx + ddy * ddy
        if d2 >= r * r or d2 == 0.0:
            return False, 0.0, 0.0, 0.0, 0.0, 0.0
        dist = math.sqrt(d2)
        lnx = ddx / dist
        lny = ddy / dist
        depth = r - dist
    nx = c * lnx - s * lny
    ny = s * lnx + c * lny
    px = bx + c * cx - s * cy
    py = by + s * cx + c * cy
    return True, px, py, nx, ny, depth


@njit(cache=True)
def _clip_segment(vx0, vy0, vx1, vy1, nx, ny, offset):
    """Clip segment (v0, v1) to the half-plane n.p <= offset.

    Returns (count, ax, ay, bx, by); count < 2 means the segment is gone.
    """
    d0 = nx * vx0 + ny * vy0 - offset
    d1 = nx * vx1 + ny * vy1 - offset
    n_out = 0
    ax = ay = bx = by = 0.0
    if d0 <= 0.0:
        ax, ay = vx0, vy0
        n_out += 1
    if d1 <= 0.0:
        if n_out == 0:
            ax, ay = vx1, vy1
        else:
            bx, by = vx1, vy1
        n_out += 1
    if d0 * d1 < 0.0:
        t = d0 / (d0 - d1)
        ix = vx0 + t * (vx1 - vx0)
        iy = vy0 + t * (vy1 - vy0)
        if n_out == 0:
            ax, ay = ix, iy
        elif n_out == 1:
            bx, by = ix, iy
        n_out += 1
    return n_out, ax, ay, bx, by


@njit(cache=True)
def _incident_edge(hx, hy, px, py, c, s, nx, ny):
    """World-frame edge of a box most anti-parallel to the given normal."""
    # normal in the box frame, flipped
    lnx = -(c * nx + s * ny)
    lny = -(-s * nx + c * ny)
    if abs(lnx) > abs(lny):
        if lnx >= 0.0:
            x0, y0, x1, y1 = hx, -hy, hx, hy
        else:
            x0, y0, x1, y1 = -hx, hy, -hx, -hy
    else:
        if lny >= 0.0:
            x0, y0, x1, y1 = hx, hy, -hx, hy
        else:
            x0, y0, x1, y1 = -hx, -hy, hx, -hy
    wx0 = px + c * x0 - s * y0
    wy0 = py + s * x0 + c * y0
    wx1 = px + c * x1 - s * y1
    wy1 = py + s * x1 + c * y1
    return wx0, wy0, wx1, wy1


@njit(cache=True)
def _collide_box_box(ax, ay, ath, ahx, ahy, bx, by, bth, bhx, bhy, out):
    """SAT with reference-face clipping, two-point manifold.

    out is a (2, 5) scratch array receiving rows (px, py, nx, ny, depth);
    the returned count says how many rows are valid. Normals point a -> b.
    """
    ca = math.cos(ath)
    sa_ = math.sin(ath)
    cb = math.cos(bth)
    sb_ = math.sin(bth)
    dpx = bx - ax
    dpy = by - ay
    # center offset in each box frame
    dax = ca * dpx + sa_ * dpy
    day = -sa_ * dpx + ca * dpy
    dbx = cb * dpx + sb_ * dpy
    dby = -sb_ * dpx + cb * dpy
    # |R_a^T R_b| entries
    c00 = ca * cb + sa_ * sb_
    c01 = -ca * sb_ + sa_ * cb
    a00 = abs(c00)
    a01 = abs(c01)
    face_a_x = abs(dax) - ahx - (a00 * bhx + a01 * bhy)
    face_a_y = abs(day) - ahy - (a01 * bhx + a00 * bhy)
    if face_a_x > 0.0 or face_a_y > 0.0:
        return 0
    face_b_x = abs(dbx) - bhx - (a00 * ahx + a01 * ahy)
    face_b_y = abs(dby) - bhy - (a01 * ahx + a00 * ahy)
    if face_b_x > 0.0 or face_b_y > 0.0:
        return 0

    # best (least penetrating) axis, with bias toward the earlier choice
    rel_tol = 0.95
    abs_tol = 0.01
    axis = 0
    separation = face_a_x
    nx = ca if dax > 0.0 else -ca
    ny = sa_ if dax > 0.0 else -sa_
    if face_a_y > rel_tol * separation + abs_tol * ahy:
        axis = 1
        separation = face_a_y
        nx = -sa_ if day > 0.0 else sa_
        ny = ca if day > 0.0 else -ca
    if face_b_x > rel_tol * separation + abs_tol * bhx:
        axis = 2
        separation = face_b_x
        nx = cb if dbx > 0.0 else -cb
        ny = sb_ if dbx > 0.0 else -sb_
    if face_b_y > rel_tol * separation + abs_tol * bhy:
        axis = 3
        separation = face_b_y
        nx = -sb_ if dby > 0.0 else sb_
        ny = cb if dby > 0.0 else -cb

    if axis == 0 or axis == 1:
        front = nx * ax + ny * ay + (ahx if axis == 0 else ahy)
        if axis == 0:
            snx, sny = -sa_, ca
            half_side = ahy
        else:
            snx, sny = ca, sa_
            half_side = ahx
        side = snx * ax + sny * ay
        e0, e1, e2, e3 = _incident_edge(bhx, bhy, bx, by, cb, sb_, nx, ny)
    else:
        front = nx * bx + ny * by + (bhx if axis == 2 else bhy)
        if axis == 2:
            snx, sny = -sb_, cb
            half_side = bhy
        else:
            snx, sny = cb, sb_
            half_side = bhx
        side = snx * bx + sny * by
        e0, e1, e2, e3 = _incident_edge(ahx, ahy, ax, ay, ca, sa_, nx, ny)

    n_in, e0, e1, e2, e3 = _clip_segment(e0, e1, e2, e3, -snx, -sny, -side + half_side)
    if n_in < 2:
        return 0
    n_in, e0, e1, e2, e3 = _clip_segment(e0, e1, e2, e3, snx, sny, side + half_side)
    if n_in < 2:
        return 0

    # flip so the stored normal always points a -> b
    if axis >= 2:
        onx, ony = -nx, -ny
    else:
        onx, ony = nx, ny
    count = 0
    for pt in range(2):
        vx = e0 if pt == 0 else e2
        vy = e1 if pt == 0 else e3
        sep = nx * vx + ny * vy - front
        if sep <= 0.0:
            out[count, 0] = vx - sep * nx
            out[count, 1] = vy - sep * ny
            out[count, 2] = onx
            out[count, 3] = ony
            out[count, 4] = -sep
            count += 1
    return count


@njit(cache=True)
def _detect(pose, inv_m, kind, sa, sb,
            con_a, con_b, con_px, con_py, con_nx, con_ny, con_depth):
    """Fill contact arrays from current poses; returns contact count."""
    n_bodies = pose.shape[0]
    n = 0
    scratch = np.empty((2, 5))
    for i in range(n_bodies):
        for j in range(i + 1, n_bodies):
            if inv_m[i] == 0.0 and inv_m[j] == 0.0:
                continue
            ki = kind[i]
            kj = kind[j]
            if ki == 0 and kj == 0:
                dx = pose[j, 0] - pose[i, 0]
                dy = pose[j, 1] - pose[i, 1]
                rsum = sa[i] + sa[j]
                d2 = dx * dx + dy * dy
                if d2 >= rsum * rsum:
                    continue
                dist = math.sqrt(d2)
                if dist > 1.0e-12:
                    nx = dx / dist
                    ny = dy / dist
                else:
                    nx, ny = 1.0, 0.0
                depth = rsum - dist
                con_a[n] = i
                con_b[n] = j
                con_px[n] = pose[i, 0] + nx * (sa[i] - 0.5 * depth)
                con_py[n] = pose[i, 1] + ny * (sa[i] - 0.5 * depth)
                con_nx[n] = nx
                con_ny[n] = ny
                con_depth[n] = depth
                n += 1
            elif ki == 0 and kj == 1:
                hit, px, py, nx, ny, depth = _collide_disk_box(
                    pose[i, 0], pose[i, 1], sa[i],
                    pose[j, 0], pose[j, 1], pose[j, 2], sa[j], sb[j])
                if hit:
                    con_a[n] = i
                    con_b[n] = j
                    con_px[n] = px
                    con_py[n] = py
                    con_nx[n] = -nx  # helper points box->disk, store a->b
                    con_ny[n] = -ny
                    con_depth[n] = depth
                    n += 1
            elif ki == 1 and kj == 0:
                hit, px, py, nx, ny, depth = _collide_disk_box(
                    pose[j, 0], pose[j, 1], sa[j],
                    pose[i, 0], pose[i, 1], pose[i, 2], sa[i], sb[i])
                if hit:
                    con_a[n] = i
                    con_b[n] = j
                    con_px[n] = px
                    con_py[n] = py
                    con_nx[n] = nx
                    con_ny[n] = ny
                    con_depth[n] = depth
                    n += 1
            else:
                cnt = _collide_box_box(
                    pose[i, 0], pose[i, 1], pose[i, 2], sa[i], sb[i],
                    pose[j, 0], pose[j, 1], pose[j, 2], sa[j], sb[j], scratch)
                for p in range(cnt):
                    con_a[n] = i
                    con_b[n] = j
                    con_px[n] = scratch[p, 0]
                    con_py[n] = scratch[p, 1]
                    con_nx[n] = scratch[p, 2]
                    con_ny[n] = scratch[p, 3]
                    con_depth[n] = scratch[p, 4]
                    n += 1
    return n


@njit(cache=True)
def _solve_velocity(pose, vel, inv_m, inv_i, n_c,
                    con_a, con_b, con_px, con_py, con_nx, con_ny,
                    mu, cfm, iters, pn, pt):
    """Sequential impulses with accumulated clamping; restitution 0."""
    for k in range(n_c):
        pn[k] = 0.0
        pt[k] = 0.0
    for _ in range(iters):
        for k in range(n_c):
            ia = con_a[k]
            ib = con_b[k]
            nx = con_nx[k]
            ny = con_ny[k]
            rax = con_px[k] - pose[ia, 0]
            ray = con_py[k] - pose[ia, 1]
            rbx = con_px[k] - pose[ib, 0]
            rby = con_py[k] - pose[ib, 1]
            # normal impulse
            dvx = vel[ib, 0] - vel[ib, 2] * rby - vel[ia, 0] + vel[ia, 2] * ray
            dvy = vel[ib, 1] + vel[ib, 2] * rbx - vel[ia, 1] - vel[ia, 2] * rax
            vn = dvx * nx + dvy * ny
            cr_an = rax * ny - ray * nx
            cr_bn = rbx * ny - rby * nx
            kn = (inv_m[ia] + inv_m[ib]
                  + inv_i[ia] * cr_an * cr_an + inv_i[ib] * cr_bn * cr_bn + cfm)
            dpn = -vn / kn
            pn_new = pn[k] + dpn
            if pn_new < 0.0:
                pn_new = 0.0
            dpn = pn_new - pn[k]
            pn[k] = pn_new
            ix = dpn * nx
            iy = dpn * ny
            vel[ia, 0] -= ix * inv_m[ia]
            vel[ia, 1] -= iy * inv_m[ia]
            vel[ia, 2] -= inv_i[ia] * (rax * iy - ray * ix)
            vel[ib, 0] += ix * inv_m[ib]
            vel[ib, 1] += iy * inv_m[ib]
            vel[ib, 2] += inv_i[ib] * (rbx * iy - rby * ix)
            if mu <= 0.0:
                continue
            # friction impulse, clamped to the current friction cone
            tx = -ny
            ty = nx
            dvx = vel[ib, 0] - vel[ib, 2] * rby - vel[ia, 0] + vel[ia, 2] * ray
            dvy = vel[ib, 1] + vel[ib, 2] * rbx - vel[ia, 1] - vel[ia, 2] * rax
            vt = dvx * tx + dvy * ty
            cr_at = rax * ty - ray * tx
            cr_bt = rbx * ty - rby * tx
            kt = (inv_m[ia] + inv_m[ib]
                  + inv_i[ia] * cr_at * cr_at + inv_i[ib] * cr_bt * cr_bt + cfm)
            dpt = -vt / kt
            max_pt = mu * pn[k]
            pt_new = min(max(pt[k] + dpt, -max_pt), max_pt)
            dpt = pt_new - pt[k]
            pt[k] = pt_new
            ix = dpt * tx
            iy = dpt * ty
            vel[ia, 0] -= ix * inv_m[ia]
            vel[ia, 1] -= iy * inv_m[ia]
            vel[ia, 2] -= inv_i[ia] * (rax * iy - ray * ix)
            vel[ib, 0] += ix * inv_m[ib]
            vel[ib, 1] += iy * inv_m[ib]
            vel[ib, 2] += inv_i[ib] * (rbx * iy - rby * ix)


@njit(cache=True)
def _position_correction(pose, inv_m, n_c,
                         con_a, con_b, con_nx, con_ny, con_depth, erp):
    for k in range(n_c):
        c = con_depth[k] - SLOP
        if c <= 0.0:
            continue
        ia = con_a[k]
        ib = con_b[k]
        msum = inv_m[ia] + inv_m[ib]
        if msum == 0.0:
            continue
        corr = erp * c / msum
        pose[ia, 0] -= con_nx[k] * corr * inv_m[ia]
        pose[ia, 1] -= con_ny[k] * corr * inv_m[ia]
        pose[ib, 0] += con_nx[k] * corr * inv_m[ib]
        pose[ib, 1] += con_ny[k] * corr * inv_m[ib]


@njit(cache=True)
def propagate_steps(pose, vel, inv_m, inv_i, kind, sa, sb, support_mu, gyr,
                    robot_idx, fx, fy, tau, n_steps, dt, gravity,
                    mu_c, cfm, erp, iters,
                    states_pose, states_vel, peak_speed, contact_any):
    """Run n_steps of semi-implicit Euler with contacts; mutates pose/vel.

    states_pose/states_vel are (n_steps + 1, N, 3) and receive the start
    state at row 0. Returns -1 on success or the index of the step that
    produced a non-finite state.
    """
    n_bodies = pose.shape[0]
    cap = n_bodies * (n_bodies - 1)
    if cap < 2:
        cap = 2
    con_a = np.empty(cap, np.int64)
    con_b = np.empty(cap, np.int64)
    con_px = np.empty(cap)
    con_py = np.empty(cap)
    con_nx = np.empty(cap)
    con_ny = np.empty(cap)
    con_depth = np.empty(cap)
    pn = np.empty(cap)
    pt = np.empty(cap)

    for i in range(n_bodies):
        states_pose[0, i, 0] = pose[i, 0]
        states_pose[0, i, 1] = pose[i, 1]
        states_pose[0, i, 2] = pose[i, 2]
        states_vel[0, i, 0] = vel[i, 0]
        states_vel[0, i, 1] = vel[i, 1]
        states_vel[0, i, 2] = vel[i, 2]
        spd = math.hypot(vel[i, 0], vel[i, 1])
        if spd > peak_speed[i]:
            peak_speed[i] = spd

    for s in range(n_steps):
        # robot actuation
        vel[robot_idx, 0] += fx * inv_m[robot_idx] * dt
        vel[robot_idx, 1] += fy * inv_m[robot_idx] * dt
        vel[robot_idx, 2] += tau * inv_i[robot_idx] * dt
        # table friction (gravity acts only through this term)
        for i in range(n_bodies):
            if inv_m[i] == 0.0 or support_mu[i] <= 0.0:
                continue
            spd = math.hypot(vel[i, 0], vel[i, 1])
            dv = support_mu[i] * gravity * dt
            if spd <= dv:
                vel[i, 0] = 0.0
                vel[i, 1] = 0.0
            else:
                f = 1.0 - dv / spd
                vel[i, 0] *= f
                vel[i, 1] *= f
            if gyr[i] > 0.0:
                dw = support_mu[i] * gravity / gyr[i] * dt
                w = vel[i, 2]
                if abs(w) <= dw:
                    vel[i, 2] = 0.0
                else:
                    vel[i, 2] = w - dw if w > 0.0 else w + dw
        # contacts
        n_c = _detect(pose, inv_m, kind, sa, sb,
                      con_a, con_b, con_px, con_py, con_nx, con_ny, con_depth)
        if n_c > 0:
            _solve_velocity(pose, vel, inv_m, inv_i, n_c,
                            con_a, con_b, con_px, con_py, con_nx, con_ny,
                            mu_c, cfm, iters, pn, pt)
            for k in range(n_c):
                contact_any[con_a[k], con_b[k]] = 1
                contact_any[con_b[k], con_a[k]] = 1
        # integrate poses (fixed bodies stay bitwise untouched)
        for i in range(n_bodies):
            if inv_m[i] == 0.0 and inv_i[i] == 0.0:
                continue
            pose[i, 0] += vel[i, 0] * dt
            pose[i, 1] += vel[i, 1] * dt
            pose[i, 2] = wrap_angle(pose[i, 2] + vel[i, 2] * dt)
        if n_c > 0 and erp > 0.0:
            _position_correction(pose, inv_m, n_c,
                                 con_a, con_b, con_nx, con_ny, con_depth, erp)
        # record and sanity-check
        ok = True
        for i in range(n_bodies):
            states_pose[s + 1, i, 0] = pose[i, 0]
            states_pose[s + 1, i, 1] = pose[i, 1]
            states_pose[s + 1, i, 2] = pose[i, 2]
            states_vel[s + 1, i, 0] = vel[i, 0]
            states_vel[s + 1, i, 1] = vel[i, 1]
            states_vel[s + 1, i, 2] = vel[i, 2]
            spd = math.hypot(vel[i, 0], vel[i, 1])
            if spd > peak_speed[i]:
                peak_speed[i] = spd
            for d in range(3):
                if not (math.isfinite(pose[i, d]) and math.isfinite(vel[i, d])):
                    ok = False
        if not ok:
            return s
    return -1


@njit(cache=True)
def solve_contacts_once(pose, vel, inv_m, inv_i, kind, sa, sb,
                        mu_c, cfm, iters,
                        con_a, con_b, con_px, con_py, con_nx, con_ny,
                        con_depth, pn, pt):
    """Detect contacts at the given poses and solve impulses once.

    Mutates vel (post-solve velocities) and the contact buffers; returns
    the contact count.
    """
    n_c = _detect(pose, inv_m, kind, sa, sb,
                  con_a, con_b, con_px, con_py, con_nx, con_ny, con_depth)
    if n_c > 0:
        _solve_velocity(pose, vel, inv_m, inv_i, n_c,
                        con_a, con_b, con_px, con_py, con_nx, con_ny,
                        mu_c, cfm, iters, pn, pt)
    return n_c
