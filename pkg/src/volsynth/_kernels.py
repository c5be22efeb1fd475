"""Compiled inner loops for trilinear resampling and fused compositing.

All kernels use zero padding: neighbors outside the index range contribute
nothing.  Voxel ``i`` has its center at continuous coordinate ``i``.
"""

import math

import numba
import numpy as np

_JIT = dict(cache=True)


@numba.njit(**_JIT)
def resample_flat(data, coords, out):
    """out[c, n] = trilinear(data[c], coords[n]) for flat coords ``(N, 3)``."""
    C, D, H, W = data.shape
    N = coords.shape[0]
    for n in range(N):
        z = coords[n, 0]
        y = coords[n, 1]
        x = coords[n, 2]
        z0f = math.floor(z)
        y0f = math.floor(y)
        x0f = math.floor(x)
        fz = z - z0f
        fy = y - y0f
        fx = x - x0f
        z0 = int(z0f)
        y0 = int(y0f)
        x0 = int(x0f)
        for c in range(C):
            out[c, n] = 0.0
        if z0 < -1 or z0 >= D or y0 < -1 or y0 >= H or x0 < -1 or x0 >= W:
            continue
        for dz in range(2):
            zi = z0 + dz
            if zi < 0 or zi >= D:
                continue
            wz = fz if dz == 1 else 1.0 - fz
            for dy in range(2):
                yi = y0 + dy
                if yi < 0 or yi >= H:
                    continue
                wy = fy if dy == 1 else 1.0 - fy
                for dx in range(2):
                    xi = x0 + dx
                    if xi < 0 or xi >= W:
                        continue
                    wx = fx if dx == 1 else 1.0 - fx
                    wgt = wz * wy * wx
                    for c in range(C):
                        out[c, n] += wgt * data[c, zi, yi, xi]


@numba.njit(**_JIT)
def resample_vjp_flat(coords, upstream, grad):
    """Transpose of :func:`resample_flat`: scatter ``upstream (C, N)`` into ``grad``.

    Serial loop in a fixed order, so results are bit-reproducible.
    """
    C, D, H, W = grad.shape
    N = coords.shape[0]
    for n in range(N):
        z = coords[n, 0]
        y = coords[n, 1]
        x = coords[n, 2]
        z0f = math.floor(z)
        y0f = math.floor(y)
        x0f = math.floor(x)
        fz = z - z0f
        fy = y - y0f
        fx = x - x0f
        z0 = int(z0f)
        y0 = int(y0f)
        x0 = int(x0f)
        if z0 < -1 or z0 >= D or y0 < -1 or y0 >= H or x0 < -1 or x0 >= W:
            continue
        for dz in range(2):
            zi = z0 + dz
            if zi < 0 or zi >= D:
                continue
            wz = fz if dz == 1 else 1.0 - fz
            for dy in range(2):
                yi = y0 + dy
                if yi < 0 or yi >= H:
                    continue
                wy = fy if dy == 1 else 1.0 - fy
                for dx in range(2):
                    xi = x0 + dx
                    if xi < 0 or xi >= W:
                        continue
                    wx = fx if dx == 1 else 1.0 - fx
                    wgt = wz * wy * wx
                    for c in range(C):
                        grad[c, zi, yi, xi] += wgt * upstream[c, n]


@numba.njit(**_JIT)
def render_fused(vol_pad, empty, dirs, zs, affine, background, rgb, alpha, depth):
    """Warp-and-composite in one pass over a prepared RGBA volume.

    ``vol_pad`` is the channel-last volume with a one-voxel zero border, so
    padded index ``p`` holds original voxel ``p - 1``.  ``empty[c]`` flags
    interpolation cells whose eight corners all have zero opacity; samples
    there add nothing and are skipped.  ``affine`` (3x4) maps a
    target-camera point to fractional original indices.
    """
    Dp, Hp, Wp, _ = vol_pad.shape
    h, w, _ = dirs.shape
    S = zs.shape[0]
    for i in range(h):
        for j in range(w):
            dx = dirs[i, j, 0]
            dy = dirs[i, j, 1]
            dzr = dirs[i, j, 2]
            # index coords are affine in depth along a ray
            bz = affine[0, 0] * dx + affine[0, 1] * dy + affine[0, 2] * dzr
            by = affine[1, 0] * dx + affine[1, 1] * dy + affine[1, 2] * dzr
            bx = affine[2, 0] * dx + affine[2, 1] * dy + affine[2, 2] * dzr
            trans = 1.0
            acc_r = 0.0
            acc_g = 0.0
            acc_b = 0.0
            acc_a = 0.0
            acc_d = 0.0
            for k in range(S):
                zk = zs[k]
                z = bz * zk + affine[0, 3] + 1.0
                y = by * zk + affine[1, 3] + 1.0
                x = bx * zk + affine[2, 3] + 1.0
                z0f = math.floor(z)
                y0f = math.floor(y)
                x0f = math.floor(x)
                z0 = int(z0f)
                y0 = int(y0f)
                x0 = int(x0f)
                if z0 < 0 or z0 >= Dp - 1 or y0 < 0 or y0 >= Hp - 1 or x0 < 0 or x0 >= Wp - 1:
                    continue
                if empty[z0, y0, x0]:
                    continue
                fz = z - z0f
                fy = y - y0f
                fx = x - x0f
                sr = 0.0
                sg = 0.0
                sb = 0.0
                sa = 0.0
                for ddz in range(2):
                    wz = fz if ddz == 1 else 1.0 - fz
                    for ddy in range(2):
                        wy = fy if ddy == 1 else 1.0 - fy
                        for ddx in range(2):
                            wgt = wz * wy * (fx if ddx == 1 else 1.0 - fx)
                            sr += wgt * vol_pad[z0 + ddz, y0 + ddy, x0 + ddx, 0]
                            sg += wgt * vol_pad[z0 + ddz, y0 + ddy, x0 + ddx, 1]
                            sb += wgt * vol_pad[z0 + ddz, y0 + ddy, x0 + ddx, 2]
                            sa += wgt * vol_pad[z0 + ddz, y0 + ddy, x0 + ddx, 3]
                wk = trans * sa
                acc_r += wk * sr
                acc_g += wk * sg
                acc_b += wk * sb
                acc_a += wk
                acc_d += wk * zk
                trans *= 1.0 - sa
            rest = 1.0 - acc_a
            rgb[i, j, 0] = acc_r + rest * background[0]
            rgb[i, j, 1] = acc_g + rest * background[1]
            rgb[i, j, 2] = acc_b + rest * background[2]
            alpha[i, j] = acc_a
            depth[i, j] = acc_d / max(acc_a, 1e-8)


@numba.njit(**_JIT)
def fit_forward(val_pad, dirs, zs, affine, background, samples, rgb):
    """Differentiable counterpart of :func:`render_fused` without skipping.

    Stores every interpolated RGBA sample in ``samples (h, w, S, 4)`` for
    the backward pass.
    """
    Dp, Hp, Wp, _ = val_pad.shape
    h, w, _ = dirs.shape
    S = zs.shape[0]
    for i in range(h):
        for j in range(w):
            dx = dirs[i, j, 0]
            dy = dirs[i, j, 1]
            dzr = dirs[i, j, 2]
            bz = affine[0, 0] * dx + affine[0, 1] * dy + affine[0, 2] * dzr
            by = affine[1, 0] * dx + affine[1, 1] * dy + affine[1, 2] * dzr
            bx = affine[2, 0] * dx + affine[2, 1] * dy + affine[2, 2] * dzr
            trans = 1.0
            acc_r = 0.0
            acc_g = 0.0
            acc_b = 0.0
            acc_a = 0.0
            for k in range(S):
                zk = zs[k]
                z = bz * zk + affine[0, 3] + 1.0
                y = by * zk + affine[1, 3] + 1.0
                x = bx * zk + affine[2, 3] + 1.0
                z0f = math.floor(z)
                y0f = math.floor(y)
                x0f = math.floor(x)
                z0 = int(z0f)
                y0 = int(y0f)
                x0 = int(x0f)
                for c in range(4):
                    samples[i, j, k, c] = 0.0
                if z0 < 0 or z0 >= Dp - 1 or y0 < 0 or y0 >= Hp - 1 or x0 < 0 or x0 >= Wp - 1:
                    continue
                fz = z - z0f
                fy = y - y0f
                fx = x - x0f
                for ddz in range(2):
                    wz = fz if ddz == 1 else 1.0 - fz
                    for ddy in range(2):
                        wy = fy if ddy == 1 else 1.0 - fy
                        for ddx in range(2):
                            wgt = wz * wy * (fx if ddx == 1 else 1.0 - fx)
                            for c in range(4):
                                samples[i, j, k, c] += wgt * val_pad[z0 + ddz, y0 + ddy, x0 + ddx, c]
                sa = samples[i, j, k, 3]
                wk = trans * sa
                acc_r += wk * samples[i, j, k, 0]
                acc_g += wk * samples[i, j, k, 1]
                acc_b += wk * samples[i, j, k, 2]
                acc_a += wk
                trans *= 1.0 - sa
            rest = 1.0 - acc_a
            rgb[i, j, 0] = acc_r + rest * background[0]
            rgb[i, j, 1] = acc_g + rest * background[1]
            rgb[i, j, 2] = acc_b + rest * background[2]


@numba.njit(**_JIT)
def fit_backward(dirs, zs, affine, background, samples, grad_rgb, grad_pad):
    """Accumulate dL/d(values) into the padded channel-last ``grad_pad``.

    Per ray, the compositing gradient is formed back to front with ``R``
    the color seen from a slice onward, then scattered through the same
    trilinear weights as the forward pass.
    """
    Dp, Hp, Wp, _ = grad_pad.shape
    h, w, _ = dirs.shape
    S = zs.shape[0]
    T = np.empty(S)
    for i in range(h):
        for j in range(w):
            trans = 1.0
            for k in range(S):
                T[k] = trans
                trans *= 1.0 - samples[i, j, k, 3]
            g0 = grad_rgb[i, j, 0]
            g1 = grad_rgb[i, j, 1]
            g2 = grad_rgb[i, j, 2]
            r0 = background[0]
            r1 = background[1]
            r2 = background[2]
            dx = dirs[i, j, 0]
            dy = dirs[i, j, 1]
            dzr = dirs[i, j, 2]
            bz = affine[0, 0] * dx + affine[0, 1] * dy + affine[0, 2] * dzr
            by = affine[1, 0] * dx + affine[1, 1] * dy + affine[1, 2] * dzr
            bx = affine[2, 0] * dx + affine[2, 1] * dy + affine[2, 2] * dzr
            for k in range(S - 1, -1, -1):
                a = samples[i, j, k, 3]
                c0 = samples[i, j, k, 0]
                c1 = samples[i, j, k, 1]
                c2 = samples[i, j, k, 2]
                ta = T[k] * a
                gc0 = g0 * ta
                gc1 = g1 * ta
                gc2 = g2 * ta
                ga = T[k] * (g0 * (c0 - r0) + g1 * (c1 - r1) + g2 * (c2 - r2))
                r0 = a * c0 + (1.0 - a) * r0
                r1 = a * c1 + (1.0 - a) * r1
                r2 = a * c2 + (1.0 - a) * r2
                zk = zs[k]
                z = bz * zk + affine[0, 3] + 1.0
                y = by * zk + affine[1, 3] + 1.0
                x = bx * zk + affine[2, 3] + 1.0
                z0f = math.floor(z)
                y0f = math.floor(y)
                x0f = math.floor(x)
                z0 = int(z0f)
                y0 = int(y0f)
                x0 = int(x0f)
                if z0 < 0 or z0 >= Dp - 1 or y0 < 0 or y0 >= Hp - 1 or x0 < 0 or x0 >= Wp - 1:
                    continue
                fz = z - z0f
                fy = y - y0f
                fx = x - x0f
                for ddz in range(2):
                    wz = fz if ddz == 1 else 1.0 - fz
                    for ddy in range(2):
                        wy = fy if ddy == 1 else 1.0 - fy
                        for ddx in range(2):
                            wgt = wz * wy * (fx if ddx == 1 else 1.0 - fx)
                            grad_pad[z0 + ddz, y0 + ddy, x0 + ddx, 0] += wgt * gc0
                            grad_pad[z0 + ddz, y0 + ddy, x0 + ddx, 1] += wgt * gc1
                            grad_pad[z0 + ddz, y0 + ddy, x0 + ddx, 2] += wgt * gc2
                            grad_pad[z0 + ddz, y0 + ddy, x0 + ddx, 3] += wgt * ga


def pad_channels_last(vol):
    C, D, H, W = vol.shape
    pad = np.zeros((D + 2, H + 2, W + 2, C), dtype=vol.dtype)
    pad[1:-1, 1:-1, 1:-1] = np.moveaxis(vol, 0, -1)
    return pad


def unpad_channels_first(pad):
    return np.ascontiguousarray(np.moveaxis(pad[1:-1, 1:-1, 1:-1], -1, 0))


def prepare_volume(vol):
    """Padded channel-last copy of ``vol (4, D, H, W)`` and its empty-cell table."""
    pad = pad_channels_last(vol)
    occ = pad[..., 3] != 0
    cell = occ[:-1, :-1, :-1] | occ[1:, :-1, :-1] | occ[:-1, 1:, :-1] | occ[:-1, :-1, 1:]
    cell |= occ[1:, 1:, :-1] | occ[1:, :-1, 1:] | occ[:-1, 1:, 1:] | occ[1:, 1:, 1:]
    return pad, np.ascontiguousarray(~cell)


def resample_array(data, coords):
    """Resample ``data (C, D, H, W)`` at ``coords (..., 3)``; returns ``(C, ...)``."""
    data = np.ascontiguousarray(data)
    flat = np.ascontiguousarray(coords.reshape(-1, 3))
    out = np.empty((data.shape[0], flat.shape[0]), dtype=np.result_type(data.dtype, np.float32))
    resample_flat(data, flat, out)
    return out.reshape((data.shape[0],) + coords.shape[:-1])


def resample_vjp_array(coords, upstream, grid_shape):
    flat = np.ascontiguousarray(coords.reshape(-1, 3))
    up = np.ascontiguousarray(upstream.reshape(upstream.shape[0], -1))
    grad = np.zeros(grid_shape, dtype=up.dtype)
    resample_vjp_flat(flat, up, grad)
    return grad
