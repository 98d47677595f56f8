# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels.

Every arithmetic expression mirrors the tree in ``_ref.py`` so both backends
produce bit-identical results (the extension is built with -ffp-contract=off
to keep FMA contraction from changing roundings).
"""

from libc.math cimport fabs, sqrt


def cartpole_step(double x, double v, double th, double w, double force,
                  double sin_t, double cos_t, double cart_mass, double pole_mass,
                  double half_len, double gravity, double dt):
    """One semi-implicit Euler step of the frictionless cart-pole."""
    cdef double total_m = cart_mass + pole_mass
    cdef double tmp = (force + pole_mass * half_len * w * w * sin_t) / total_m
    cdef double ang_acc = (gravity * sin_t - cos_t * tmp) / (
        half_len * (4.0 / 3.0 - pole_mass * cos_t * cos_t / total_m)
    )
    cdef double lin_acc = tmp - pole_mass * half_len * ang_acc * cos_t / total_m
    cdef double v2 = v + dt * lin_acc
    cdef double w2 = w + dt * ang_acc
    cdef double x2 = x + dt * v2
    cdef double th2 = th + dt * w2
    return x2, v2, th2, w2


def render_frame(double[:, ::1] out, double cart_x, double cart_y, double cart_half_w,
                 double cart_half_h, double pivot_y, double ex, double ey,
                 double seg_len2, double pole_half_w, double scale):
    """Rasterize cart rectangle + pole segment into ``out`` (H, W)."""
    cdef Py_ssize_t height = out.shape[0]
    cdef Py_ssize_t width = out.shape[1]
    cdef Py_ssize_t r, c
    cdef double px, py, qx, qy_c, qy, dxr, dyr, d_rect, cov, t, ddx, ddy, d_seg, cov_p

    for r in range(height):
        py = ((height - 1) * 0.5 - r) * scale
        qy_c = py - cart_y
        qy = py - pivot_y
        for c in range(width):
            px = (c - (width - 1) * 0.5) * scale
            qx = px - cart_x

            dxr = fabs(qx) - cart_half_w
            dyr = fabs(qy_c) - cart_half_h
            d_rect = dxr if dxr > dyr else dyr
            cov = 0.5 - d_rect / scale

            t = (qx * ex + qy * ey) / seg_len2
            if t < 0.0:
                t = 0.0
            elif t > 1.0:
                t = 1.0
            ddx = qx - t * ex
            ddy = qy - t * ey
            d_seg = sqrt(ddx * ddx + ddy * ddy) - pole_half_w
            cov_p = 0.5 - d_seg / scale

            if cov_p > cov:
                cov = cov_p
            if cov < 0.0:
                cov = 0.0
            elif cov > 1.0:
                cov = 1.0
            out[r, c] = cov
