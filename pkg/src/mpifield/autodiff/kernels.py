"""Numba inner loops for sampling, warping and fused rendering.

All kernels are single-threaded and visit elements in a fixed order, so
results are reproducible bit-for-bit across runs.  Sampling convention:
a sample at continuous source position (x, y) is valid iff
0 <= x <= W-1 and 0 <= y <= H-1; anything outside returns 0 with
validity 0.  Corner indices are clamped so the x == W-1 / y == H-1
edge reads in-bounds with the out-of-range corner carrying zero weight.
"""

import numpy as np
from numba import njit

F32 = np.float32


@njit(cache=True, nogil=True)
def bilinear_gather(src, xs, ys, out, valid):
    # src [C,H,W], xs/ys [N] source pixel coords, out [C,N], valid [N]
    C, H, W = src.shape
    N = xs.shape[0]
    one = F32(1.0)
    zero = F32(0.0)
    xmax = F32(W - 1)
    ymax = F32(H - 1)
    for n in range(N):
        x = xs[n]
        y = ys[n]
        if x < zero or x > xmax or y < zero or y > ymax:
            valid[n] = zero
            for c in range(C):
                out[c, n] = zero
            continue
        valid[n] = one
        x0 = int(x)
        y0 = int(y)
        if x0 > W - 2:
            x0 = W - 2
        if y0 > H - 2:
            y0 = H - 2
        fx = x - F32(x0)
        fy = y - F32(y0)
        w11 = fx * fy
        w01 = fx - w11
        w10 = fy - w11
        w00 = one - fx - fy + w11
        for c in range(C):
            out[c, n] = (w00 * src[c, y0, x0] + w01 * src[c, y0, x0 + 1]
                         + w10 * src[c, y0 + 1, x0] + w11 * src[c, y0 + 1, x0 + 1])


@njit(cache=True, nogil=True)
def bilinear_scatter(gout, xs, ys, gsrc):
    # gout [C,N] upstream gradient, accumulated into gsrc [C,H,W]
    C, H, W = gsrc.shape
    N = xs.shape[0]
    zero = F32(0.0)
    one = F32(1.0)
    xmax = F32(W - 1)
    ymax = F32(H - 1)
    for n in range(N):
        x = xs[n]
        y = ys[n]
        if x < zero or x > xmax or y < zero or y > ymax:
            continue
        x0 = int(x)
        y0 = int(y)
        if x0 > W - 2:
            x0 = W - 2
        if y0 > H - 2:
            y0 = H - 2
        fx = x - F32(x0)
        fy = y - F32(y0)
        w11 = fx * fy
        w01 = fx - w11
        w10 = fy - w11
        w00 = one - fx - fy + w11
        for c in range(C):
            g = gout[c, n]
            gsrc[c, y0, x0] += w00 * g
            gsrc[c, y0, x0 + 1] += w01 * g
            gsrc[c, y0 + 1, x0] += w10 * g
            gsrc[c, y0 + 1, x0 + 1] += w11 * g


@njit(cache=True, nogil=True)
def fill_grid(h, ox, oy, Ho, Wo, xs, ys):
    # h [9] f32: maps target pixel (u,v) -> source pixel; xs/ys [Ho*Wo]
    h00 = h[0]; h01 = h[1]; h02 = h[2]
    h10 = h[3]; h11 = h[4]; h12 = h[5]
    h20 = h[6]; h21 = h[7]; h22 = h[8]
    k = 0
    for i in range(Ho):
        fi = F32(i + oy)
        fx0 = F32(ox)
        xn = h00 * fx0 + h01 * fi + h02
        yn = h10 * fx0 + h11 * fi + h12
        den = h20 * fx0 + h21 * fi + h22
        for _ in range(Wo):
            r = F32(1.0) / den
            xs[k] = xn * r
            ys[k] = yn * r
            xn += h00
            yn += h10
            den += h20
            k += 1


@njit(cache=True, nogil=True, fastmath=True)
def warp_composite_rgba(planes, H, W, Hs, ox, oy, Ho, Wo, out, trans):
    """Fused inverse-warp + front-to-back over for inference rendering.

    planes  [D, H*W, 4] interleaved RGBA (straight alpha), nearest first
    Hs      [D, 9] f32 homographies mapping target pixels -> source pixels
    out     [Ho*Wo, 3] composited image, trans [Ho*Wo] final transmittance

    Pixels whose accumulated transmittance falls below 1e-6 stop visiting
    farther planes (their remaining contribution is below that bound).
    """
    D = planes.shape[0]
    one = F32(1.0)
    zero = F32(0.0)
    xmax = F32(W - 1)
    ymax = F32(H - 1)
    tmin = F32(1e-6)
    for k in range(Ho * Wo):
        trans[k] = one
        out[k, 0] = zero
        out[k, 1] = zero
        out[k, 2] = zero
    for d in range(D):
        h00 = Hs[d, 0]; h01 = Hs[d, 1]; h02 = Hs[d, 2]
        h10 = Hs[d, 3]; h11 = Hs[d, 4]; h12 = Hs[d, 5]
        h20 = Hs[d, 6]; h21 = Hs[d, 7]; h22 = Hs[d, 8]
        pd = planes[d]
        for i in range(Ho):
            fi = F32(i + oy)
            fx0 = F32(ox)
            xn = h00 * fx0 + h01 * fi + h02
            yn = h10 * fx0 + h11 * fi + h12
            den = h20 * fx0 + h21 * fi + h22
            k = i * Wo
            for _ in range(Wo):
                T = trans[k]
                if T >= tmin:
                    r = one / den
                    x = xn * r
                    y = yn * r
                    if x >= zero and x <= xmax and y >= zero and y <= ymax:
                        x0 = int(x)
                        y0 = int(y)
                        if x0 > W - 2:
                            x0 = W - 2
                        if y0 > H - 2:
                            y0 = H - 2
                        fx = x - F32(x0)
                        fy = y - F32(y0)
                        i00 = y0 * W + x0
                        i10 = i00 + W
                        w11 = fx * fy
                        w01 = fx - w11
                        w10 = fy - w11
                        w00 = one - fx - fy + w11
                        a = (w00 * pd[i00, 3] + w01 * pd[i00 + 1, 3]
                             + w10 * pd[i10, 3] + w11 * pd[i10 + 1, 3])
                        if a > zero:
                            w = T * a
                            out[k, 0] += w * (w00 * pd[i00, 0] + w01 * pd[i00 + 1, 0]
                                              + w10 * pd[i10, 0] + w11 * pd[i10 + 1, 0])
                            out[k, 1] += w * (w00 * pd[i00, 1] + w01 * pd[i00 + 1, 1]
                                              + w10 * pd[i10, 1] + w11 * pd[i10 + 1, 1])
                            out[k, 2] += w * (w00 * pd[i00, 2] + w01 * pd[i00 + 1, 2]
                                              + w10 * pd[i10, 2] + w11 * pd[i10 + 1, 2])
                            trans[k] = T * (one - a)
                xn += h00
                yn += h10
                den += h20
                k += 1


@njit(cache=True, nogil=True)
def col2im_add(gcol, N, C, kh, kw, Hp, Wp, Ho, Wo, stride, gpad):
    # gcol [C*kh*kw, N*Ho*Wo]; gpad [N, C, Hp, Wp] accumulated in place
    for n in range(N):
        col0 = n * Ho * Wo
        for c in range(C):
            for a in range(kh):
                for b in range(kw):
                    row = (c * kh + a) * kw + b
                    for i in range(Ho):
                        ii = i * stride + a
                        base = col0 + i * Wo
                        for j in range(Wo):
                            gpad[n, c, ii, j * stride + b] += gcol[row, base + j]
