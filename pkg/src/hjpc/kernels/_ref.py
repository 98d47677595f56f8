"""Pure-numpy reference kernels.

Bit-compatibility contract: every arithmetic expression here is written with
the exact same operation tree as the compiled twin in ``_fast.pyx``. numpy
elementwise ops and C scalar ops round identically per IEEE-754, so keeping
the trees identical (and compiling the extension with FMA contraction off)
makes the two backends agree bit for bit. Transcendentals (sin/cos) are
evaluated by the caller and passed in.
"""

import numpy as np


def cartpole_step(x, v, th, w, force, sin_t, cos_t, cart_mass, pole_mass, half_len, gravity, dt):
    """One semi-implicit Euler step of the frictionless cart-pole.

    Velocities are advanced with the current accelerations, then positions
    are advanced with the new velocities. Returns (x, v, th, w) floats.
    """
    total_m = cart_mass + pole_mass
    tmp = (force + pole_mass * half_len * w * w * sin_t) / total_m
    ang_acc = (gravity * sin_t - cos_t * tmp) / (
        half_len * (4.0 / 3.0 - pole_mass * cos_t * cos_t / total_m)
    )
    lin_acc = tmp - pole_mass * half_len * ang_acc * cos_t / total_m
    v2 = v + dt * lin_acc
    w2 = w + dt * ang_acc
    x2 = x + dt * v2
    th2 = th + dt * w2
    return x2, v2, th2, w2


def render_frame(out, cart_x, cart_y, cart_half_w, cart_half_h, pivot_y, ex, ey, seg_len2,
                 pole_half_w, scale):
    """Rasterize cart rectangle + pole segment into ``out`` (H, W) float64.

    Coverage shading: pixel value = clamp(0.5 - d/scale, 0, 1) where d is the
    signed distance to the nearest shape boundary, so interiors are 1,
    background is 0, and boundary pixels grade continuously with sub-pixel
    state changes.
    """
    height, width = out.shape
    cols = np.arange(width, dtype=np.float64)
    rows = np.arange(height, dtype=np.float64)
    # symmetric pixel centers: negation-exact so the upright pose mirrors bitwise
    px = (cols - (width - 1) * 0.5) * scale
    py = ((height - 1) * 0.5 - rows) * scale
    qx = px[None, :] - cart_x
    qy_c = py[:, None] - cart_y

    dxr = np.abs(qx) - cart_half_w
    dyr = np.abs(qy_c) - cart_half_h
    d_rect = np.maximum(dxr, dyr)
    cov = 0.5 - d_rect / scale

    qy = py[:, None] - pivot_y
    t = (qx * ex + qy * ey) / seg_len2
    np.clip(t, 0.0, 1.0, out=t)
    ddx = qx - t * ex
    ddy = qy - t * ey
    d_seg = np.sqrt(ddx * ddx + ddy * ddy) - pole_half_w
    cov_p = 0.5 - d_seg / scale

    np.maximum(cov, cov_p, out=cov)
    np.clip(cov, 0.0, 1.0, out=cov)
    out[:, :] = cov
