"""Numba compositing kernels for the splatting renderer.

Two schedules share an identical per-pixel inner loop: the tile kernel walks
per-tile depth-sorted lists, the naive kernel walks the full sorted array per
pixel. Because the arithmetic and contributor order match operation for
operation, their outputs are bit-identical; the naive kernel serves as the
reference in equivalence tests.

A primitive contributes to a pixel exactly when the pixel center lies inside
the primitive's integer screen bounding box (aabb, inclusive). Compositing is
front to back: C += I * alpha * T, T *= 1 - alpha, stopping once T drops
below t_min; the remaining transmittance is filled with the background.
"""
import math

import numpy as np
from numba import njit, prange


@njit(cache=True, parallel=True)
def forward_tile(
    image,
    transmit,
    ncontrib,
    tile_starts,
    tile_items,
    mean2d,
    conic,
    opacity,
    intensity,
    aabb,
    background,
    alpha_max,
    t_min,
    tile,
    n_tx,
):
    height, width = image.shape
    n_tiles = tile_starts.shape[0] - 1
    for tid in prange(n_tiles):
        ty = tid // n_tx
        tx = tid % n_tx
        y_end = min((ty + 1) * tile, height)
        x_end = min((tx + 1) * tile, width)
        k0 = tile_starts[tid]
        k1 = tile_starts[tid + 1]
        for py in range(ty * tile, y_end):
            for px in range(tx * tile, x_end):
                trans = 1.0
                accum = 0.0
                n = 0
                for k in range(k0, k1):
                    if trans < t_min:
                        break
                    g = tile_items[k]
                    if px < aabb[g, 0] or px > aabb[g, 1] or py < aabb[g, 2] or py > aabb[g, 3]:
                        continue
                    dx = px - mean2d[g, 0]
                    dy = py - mean2d[g, 1]
                    power = 0.5 * (conic[g, 0] * dx * dx + conic[g, 2] * dy * dy) + conic[g, 1] * dx * dy
                    alpha = opacity[g] * math.exp(-power)
                    if alpha > alpha_max:
                        alpha = alpha_max
                    accum += intensity[g] * alpha * trans
                    trans *= 1.0 - alpha
                    n += 1
                image[py, px] = accum + background * trans
                transmit[py, px] = trans
                ncontrib[py, px] = n


@njit(cache=True)
def forward_naive(
    image,
    transmit,
    ncontrib,
    mean2d,
    conic,
    opacity,
    intensity,
    aabb,
    background,
    alpha_max,
    t_min,
):
    height, width = image.shape
    count = mean2d.shape[0]
    for py in range(height):
        for px in range(width):
            trans = 1.0
            accum = 0.0
            n = 0
            for g in range(count):
                if trans < t_min:
                    break
                if px < aabb[g, 0] or px > aabb[g, 1] or py < aabb[g, 2] or py > aabb[g, 3]:
                    continue
                dx = px - mean2d[g, 0]
                dy = py - mean2d[g, 1]
                power = 0.5 * (conic[g, 0] * dx * dx + conic[g, 2] * dy * dy) + conic[g, 1] * dx * dy
                alpha = opacity[g] * math.exp(-power)
                if alpha > alpha_max:
                    alpha = alpha_max
                accum += intensity[g] * alpha * trans
                trans *= 1.0 - alpha
                n += 1
            image[py, px] = accum + background * trans
            transmit[py, px] = trans
            ncontrib[py, px] = n


@njit(cache=True)
def backward_tile(
    dl_dimage,
    tile_starts,
    tile_items,
    mean2d,
    conic,
    opacity,
    intensity,
    aabb,
    background,
    alpha_max,
    t_min,
    tile,
    n_tx,
    height,
    width,
    d_mean2d,
    d_conic,
    d_opacity,
    d_intensity,
):
    """Accumulate screen-space gradients by replaying the forward pass per pixel.

    Serial over tiles in row-major order so the floating-point accumulation
    order is fixed. Per pixel the contributor walk is replayed into scratch
    buffers, then swept back to front: the running term S holds the light
    accumulated behind the current contributor including the background.
    Clamped alphas propagate nothing to opacity or geometry.
    """
    n_tiles = tile_starts.shape[0] - 1
    max_len = 0
    for tid in range(n_tiles):
        length = tile_starts[tid + 1] - tile_starts[tid]
        if length > max_len:
            max_len = length
    g_buf = np.empty(max_len, np.int64)
    a_buf = np.empty(max_len, np.float64)
    t_buf = np.empty(max_len, np.float64)

    for tid in range(n_tiles):
        ty = tid // n_tx
        tx = tid % n_tx
        y_end = min((ty + 1) * tile, height)
        x_end = min((tx + 1) * tile, width)
        k0 = tile_starts[tid]
        k1 = tile_starts[tid + 1]
        for py in range(ty * tile, y_end):
            for px in range(tx * tile, x_end):
                gpix = dl_dimage[py, px]
                if gpix == 0.0:
                    continue
                trans = 1.0
                n = 0
                for k in range(k0, k1):
                    if trans < t_min:
                        break
                    g = tile_items[k]
                    if px < aabb[g, 0] or px > aabb[g, 1] or py < aabb[g, 2] or py > aabb[g, 3]:
                        continue
                    dx = px - mean2d[g, 0]
                    dy = py - mean2d[g, 1]
                    power = 0.5 * (conic[g, 0] * dx * dx + conic[g, 2] * dy * dy) + conic[g, 1] * dx * dy
                    alpha = opacity[g] * math.exp(-power)
                    if alpha > alpha_max:
                        alpha = alpha_max
                    g_buf[n] = g
                    a_buf[n] = alpha
                    t_buf[n] = trans
                    trans *= 1.0 - alpha
                    n += 1
                behind = background * trans
                for i in range(n - 1, -1, -1):
                    g = g_buf[i]
                    alpha = a_buf[i]
                    t_before = t_buf[i]
                    d_intensity[g] += gpix * alpha * t_before
                    d_alpha = gpix * (intensity[g] * t_before - behind / (1.0 - alpha))
                    behind += intensity[g] * alpha * t_before
                    if alpha >= alpha_max:
                        continue
                    d_opacity[g] += d_alpha * (alpha / opacity[g])
                    d_power = -d_alpha * alpha
                    dx = px - mean2d[g, 0]
                    dy = py - mean2d[g, 1]
                    d_conic[g, 0] += d_power * 0.5 * dx * dx
                    d_conic[g, 1] += d_power * dx * dy
                    d_conic[g, 2] += d_power * 0.5 * dy * dy
                    d_mean2d[g, 0] -= d_power * (conic[g, 0] * dx + conic[g, 1] * dy)
                    d_mean2d[g, 1] -= d_power * (conic[g, 1] * dx + conic[g, 2] * dy)
