"""Compiled element-pair loops for Helmholtz layer operators.

Each unordered pair of triangles is visited once.  For a pair (i, j) the
loops accumulate the local 3x3 blocks

* ``v[a, b]  = int_i int_j  l_a(x) l_b(y) G(x, y)``
* ``kij[a, b] = int_i int_j l_a(x) l_b(y) dG/dn_y(x, y)``
* ``kji[b, a] = int_j int_i l_b(y) l_a(x) dG/dn_x(y, x)``

in P1 barycentric basis functions ``l``.  Global matrices over P0 or P1
spaces are obtained by scattering through dof maps of shape (nt, 3); a P0
map repeats the triangle index so the basis sum collapses to one entry.
The hypersingular block uses the integration-by-parts weak form built
from ``v`` and the constant surface curls of the P1 basis.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

_FOUR_PI = 4.0 * math.pi
_INV_FOUR_PI = 1.0 / _FOUR_PI

# Cody-Waite split of pi/2 for argument reduction
_PIO2_HI = 1.57079632673412561417e00
_PIO2_LO = 6.07710050650619224932e-11
_TWO_OVER_PI = 0.6366197723675814

# value-safe fast-math flags: no reassociation, which would break the
# two-constant argument reduction in _sincos
_FASTMATH = {"contract", "arcp", "nsz", "nnan", "ninf"}


@nb.njit(cache=True, inline="always", error_model="numpy")
def _sincos(x):
    """Branch-free sine and cosine, accurate to a few ulp for |x| < 1e5.

    The libm calls dominate the cost of the pair loops; this reduction to
    [-pi/4, pi/4] followed by Taylor polynomials is several times faster.
    """
    n = math.floor(x * _TWO_OVER_PI + 0.5)
    y = (x - n * _PIO2_HI) - n * _PIO2_LO
    z = y * y
    s = y * (1.0 + z * (-1.6666666666666666e-01 + z * (8.3333333333333332e-03 + z * (
        -1.9841269841269841e-04 + z * (2.7557319223985893e-06 + z * (-2.5052108385441720e-08 + z * (
            1.6059043836821613e-10 + z * -7.6471637318198164e-13)))))))
    c = 1.0 + z * (-0.5 + z * (4.1666666666666664e-02 + z * (-1.3888888888888889e-03 + z * (
        2.4801587301587302e-05 + z * (-2.7557319223985888e-07 + z * (2.0876756987868100e-09 + z * (
            -1.1470745597729725e-11 + z * 4.7794773323873853e-14)))))))
    q = int(n)
    sw = float(q & 1)
    ss = 1.0 - 2.0 * float((q >> 1) & 1)
    sc = 1.0 - 2.0 * float(((q + 1) >> 1) & 1)
    return ss * (s + sw * (c - s)), sc * (c + sw * (s - c))


@nb.njit(cache=True, inline="always", error_model="numpy")
def _kernel(kre, kim, r):
    """Helmholtz kernel and gradient factor in real arithmetic.

    Returns (Re G, Im G, Re f, Im f) where grad_y G(x, y) = f (y - x).
    """
    sn, cs = _sincos(kre * r)
    if kim != 0.0:
        damp = math.exp(-kim * r)
        sn *= damp
        cs *= damp
    inv = 1.0 / r
    c1 = inv * _INV_FOUR_PI
    c3 = c1 * inv * inv
    ar = -kim * r - 1.0
    ai = kre * r
    return cs * c1, sn * c1, (cs * ar - sn * ai) * c3, (cs * ai + sn * ar) * c3


@nb.njit(cache=True, error_model="numpy", fastmath=_FASTMATH)
def _pair_product_rule(pi, pj, ni, nj, bx, wx, by, wy, kre, kim, v, kij, kji, xs, ys, buf):
    """Accumulate local blocks with a product of two triangle rules.

    The work is split into flat passes (geometry, damping, kernel,
    contraction) so that the kernel pass vectorises.  ``xs``, ``ys`` of
    shape (nq, 3) and ``buf`` of shape (10, nq * nq) are scratch space.
    """
    nqx = bx.shape[0]
    nqy = by.shape[0]
    nm = nqx * nqy
    for q in range(nqy):
        for c in range(3):
            ys[q, c] = by[q, 0] * pj[0, c] + by[q, 1] * pj[1, c] + by[q, 2] * pj[2, c]
    for q in range(nqx):
        for c in range(3):
            xs[q, c] = bx[q, 0] * pi[0, c] + bx[q, 1] * pi[1, c] + bx[q, 2] * pi[2, c]
    rr = buf[6]
    dny = buf[7]
    dnx = buf[8]
    ww = buf[9]
    ni0, ni1, ni2 = ni[0], ni[1], ni[2]
    nj0, nj1, nj2 = nj[0], nj[1], nj[2]
    for p in range(nqx):
        x0 = xs[p, 0]
        x1 = xs[p, 1]
        x2 = xs[p, 2]
        wp = wx[p]
        for q in range(nqy):
            m = p * nqy + q
            d0 = ys[q, 0] - x0
            d1 = ys[q, 1] - x1
            d2 = ys[q, 2] - x2
            rr[m] = math.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
            dny[m] = d0 * nj0 + d1 * nj1 + d2 * nj2
            dnx[m] = -(d0 * ni0 + d1 * ni1 + d2 * ni2)
            ww[m] = wp * wy[q]
    if kim != 0.0:
        for m in range(nm):
            ww[m] *= math.exp(-kim * rr[m])
    for m in range(nm):
        r = rr[m]
        sn, cs = _sincos(kre * r)
        c1 = ww[m] * _INV_FOUR_PI / r
        c3 = c1 / (r * r)
        ar = -kim * r - 1.0
        ai = kre * r
        fr = (cs * ar - sn * ai) * c3
        fi = (cs * ai + sn * ar) * c3
        buf[0, m] = cs * c1
        buf[1, m] = sn * c1
        buf[2, m] = fr * dny[m]
        buf[3, m] = fi * dny[m]
        buf[4, m] = fr * dnx[m]
        buf[5, m] = fi * dnx[m]
    for blk in range(3):
        for b in range(3):
            for p in range(nqx):
                sr = 0.0
                si = 0.0
                for q in range(nqy):
                    sr += buf[2 * blk, p * nqy + q] * by[q, b]
                    si += buf[2 * blk + 1, p * nqy + q] * by[q, b]
                for a in range(3):
                    val = bx[p, a] * (sr + 1j * si)
                    if blk == 0:
                        v[a, b] += val
                    elif blk == 1:
                        kij[a, b] += val
                    else:
                        kji[b, a] += val


@nb.njit(cache=True, error_model="numpy")
def _basis_products(bx, by):
    """Products ``bx[q, a] * by[q, b]`` laid out as (9, nq) with row 3 a + b."""
    nq = bx.shape[0]
    out = np.empty((9, nq))
    for a in range(3):
        for b in range(3):
            for q in range(nq):
                out[3 * a + b, q] = bx[q, a] * by[q, b]
    return out


@nb.njit(cache=True, error_model="numpy", fastmath=_FASTMATH)
def _pair_singular_rule(pi, pj, ni, nj, bx, by, w, prod, kre, kim, v, kij, kji, buf):
    """Accumulate local blocks (in the permuted vertex order) with a 4D rule.

    ``prod`` comes from :func:`_basis_products`; ``buf`` is (10, nq) scratch.
    """
    nq = w.shape[0]
    rr = buf[6]
    dny = buf[7]
    dnx = buf[8]
    ww = buf[9]
    for q in range(nq):
        d0 = ((by[q, 0] * pj[0, 0] + by[q, 1] * pj[1, 0] + by[q, 2] * pj[2, 0])
              - (bx[q, 0] * pi[0, 0] + bx[q, 1] * pi[1, 0] + bx[q, 2] * pi[2, 0]))
        d1 = ((by[q, 0] * pj[0, 1] + by[q, 1] * pj[1, 1] + by[q, 2] * pj[2, 1])
              - (bx[q, 0] * pi[0, 1] + bx[q, 1] * pi[1, 1] + bx[q, 2] * pi[2, 1]))
        d2 = ((by[q, 0] * pj[0, 2] + by[q, 1] * pj[1, 2] + by[q, 2] * pj[2, 2])
              - (bx[q, 0] * pi[0, 2] + bx[q, 1] * pi[1, 2] + bx[q, 2] * pi[2, 2]))
        rr[q] = math.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
        dny[q] = d0 * nj[0] + d1 * nj[1] + d2 * nj[2]
        dnx[q] = -(d0 * ni[0] + d1 * ni[1] + d2 * ni[2])
        ww[q] = w[q]
    if kim != 0.0:
        for q in range(nq):
            ww[q] *= math.exp(-kim * rr[q])
    for q in range(nq):
        r = rr[q]
        sn, cs = _sincos(kre * r)
        c1 = ww[q] * _INV_FOUR_PI / r
        c3 = c1 / (r * r)
        ar = -kim * r - 1.0
        ai = kre * r
        fr = (cs * ar - sn * ai) * c3
        fi = (cs * ai + sn * ar) * c3
        buf[0, q] = cs * c1
        buf[1, q] = sn * c1
        buf[2, q] = fr * dny[q]
        buf[3, q] = fi * dny[q]
        buf[4, q] = fr * dnx[q]
        buf[5, q] = fi * dnx[q]
    for a in range(3):
        for b in range(3):
            row = prod[3 * a + b]
            s0 = 0.0
            s1 = 0.0
            s2 = 0.0
            s3 = 0.0
            s4 = 0.0
            s5 = 0.0
            for q in range(nq):
                pq = row[q]
                s0 += buf[0, q] * pq
                s1 += buf[1, q] * pq
                s2 += buf[2, q] * pq
                s3 += buf[3, q] * pq
                s4 += buf[4, q] * pq
                s5 += buf[5, q] * pq
            v[a, b] += s0 + 1j * s1
            kij[a, b] += s2 + 1j * s3
            kji[b, a] += s4 + 1j * s5


@nb.njit(cache=True, error_model="numpy")
def _scatter(i, j, v, kij, kji, scale, kk, ni, nj, curls, map_n, map_d,
             want_v, want_k, want_w, out_v, out_k, out_w):
    """Scatter local blocks of the pair (i, j) (and (j, i) when i != j)."""
    vc = 0.0 + 0.0j
    if want_w:
        for a in range(3):
            for b in range(3):
                vc += v[a, b]
        vc *= scale
        nn = ni[0] * nj[0] + ni[1] * nj[1] + ni[2] * nj[2]
    for a in range(3):
        for b in range(3):
            vab = scale * v[a, b]
            if want_v:
                out_v[map_n[i, a], map_n[j, b]] += vab
                if i != j:
                    out_v[map_n[j, b], map_n[i, a]] += vab
            if want_k:
                out_k[map_n[i, a], map_d[j, b]] += scale * kij[a, b]
                if i != j:
                    out_k[map_n[j, b], map_d[i, a]] += scale * kji[b, a]
            if want_w:
                cc = (curls[i, a, 0] * curls[j, b, 0] + curls[i, a, 1] * curls[j, b, 1]
                      + curls[i, a, 2] * curls[j, b, 2])
                wab = cc * vc - kk * nn * vab
                out_w[map_d[i, a], map_d[j, b]] += wab
                if i != j:
                    out_w[map_d[j, b], map_d[i, a]] += wab


@nb.njit(cache=True, error_model="numpy")
def assemble_regular(verts, tris, normals, areas, centroids, diams, curls, body, kbody, couple,
                     map_n, map_d, want_v, want_k, want_w,
                     b_far, w_far, b_mid, w_mid, b_near, w_near, mid_ratio, near_ratio,
                     out_v, out_k, out_kt, out_w):
    """Loop over all unordered pairs of non-touching triangles.

    Only the blocks on the rows of the first triangle of each pair are
    written, which keeps the scatter cache friendly.  The caller completes
    the matrices by adding ``out_v.T`` and ``out_w.T`` (both operators are
    symmetric) and ``out_kt.T``, which holds the transposed double-layer
    contributions of the pairs.
    """
    nt = tris.shape[0]
    v = np.zeros((3, 3), dtype=np.complex128)
    kij = np.zeros((3, 3), dtype=np.complex128)
    kji = np.zeros((3, 3), dtype=np.complex128)
    nq = max(b_far.shape[0], b_mid.shape[0], b_near.shape[0])
    xs = np.empty((nq, 3))
    ys = np.empty((nq, 3))
    buf = np.empty((10, nq * nq))
    pi = np.empty((3, 3))
    pj = np.empty((3, 3))
    for i in range(nt):
        for c in range(3):
            for d in range(3):
                pi[c, d] = verts[tris[i, c], d]
        ti0 = tris[i, 0]
        ti1 = tris[i, 1]
        ti2 = tris[i, 2]
        for j in range(i + 1, nt):
            if body[i] != body[j] and not couple:
                continue
            touching = False
            for b in range(3):
                t = tris[j, b]
                if t == ti0 or t == ti1 or t == ti2:
                    touching = True
            if touching:
                continue
            k = kbody[body[i]]
            for c in range(3):
                for d in range(3):
                    pj[c, d] = verts[tris[j, c], d]
            dx = centroids[i, 0] - centroids[j, 0]
            dy = centroids[i, 1] - centroids[j, 1]
            dz = centroids[i, 2] - centroids[j, 2]
            ratio = math.sqrt(dx * dx + dy * dy + dz * dz) / max(diams[i], diams[j])
            v[:] = 0.0
            kij[:] = 0.0
            kji[:] = 0.0
            if ratio < near_ratio:
                _pair_product_rule(pi, pj, normals[i], normals[j], b_near, w_near, b_near, w_near,
                                   k.real, k.imag, v, kij, kji, xs, ys, buf)
            elif ratio < mid_ratio:
                _pair_product_rule(pi, pj, normals[i], normals[j], b_mid, w_mid, b_mid, w_mid,
                                   k.real, k.imag, v, kij, kji, xs, ys, buf)
            else:
                _pair_product_rule(pi, pj, normals[i], normals[j], b_far, w_far, b_far, w_far,
                                   k.real, k.imag, v, kij, kji, xs, ys, buf)
            # scatter into the rows owned by triangle i only (written inline:
            # a helper call per pair costs more than the scatter itself)
            scale = areas[i] * areas[j]
            kk = k * k
            vc = 0.0 + 0.0j
            nnij = 0.0
            if want_w:
                for a in range(3):
                    for b in range(3):
                        vc += v[a, b]
                vc *= scale
                nnij = (normals[i, 0] * normals[j, 0] + normals[i, 1] * normals[j, 1]
                        + normals[i, 2] * normals[j, 2])
            for a in range(3):
                ra = map_n[i, a]
                rd = map_d[i, a]
                for b in range(3):
                    vab = scale * v[a, b]
                    if want_v:
                        out_v[ra, map_n[j, b]] += vab
                    if want_k:
                        out_k[ra, map_d[j, b]] += scale * kij[a, b]
                        out_kt[rd, map_n[j, b]] += scale * kji[b, a]
                    if want_w:
                        cc = (curls[i, a, 0] * curls[j, b, 0] + curls[i, a, 1] * curls[j, b, 1]
                              + curls[i, a, 2] * curls[j, b, 2])
                        out_w[rd, map_d[j, b]] += cc * vc - kk * nnij * vab


@nb.njit(cache=True, error_model="numpy")
def assemble_singular(verts, tris, normals, areas, curls, body, kbody, pairs, kinds, perms,
                      map_n, map_d, want_v, want_k, want_w,
                      bx0, by0, w0, bx1, by1, w1, bx2, by2, w2,
                      out_v, out_k, out_w):
    """Touching pairs: coincident (kind 0), shared edge (1), shared vertex (2)."""
    v = np.zeros((3, 3), dtype=np.complex128)
    kij = np.zeros((3, 3), dtype=np.complex128)
    kji = np.zeros((3, 3), dtype=np.complex128)
    vp = np.zeros((3, 3), dtype=np.complex128)
    kijp = np.zeros((3, 3), dtype=np.complex128)
    kjip = np.zeros((3, 3), dtype=np.complex128)
    pi = np.empty((3, 3))
    pj = np.empty((3, 3))
    p0 = _basis_products(bx0, by0)
    p1 = _basis_products(bx1, by1)
    p2 = _basis_products(bx2, by2)
    buf = np.empty((10, max(w0.shape[0], w1.shape[0], w2.shape[0])))
    for s in range(pairs.shape[0]):
        i = pairs[s, 0]
        j = pairs[s, 1]
        k = kbody[body[i]]
        for c in range(3):
            for d in range(3):
                pi[c, d] = verts[tris[i, perms[s, 0, c]], d]
                pj[c, d] = verts[tris[j, perms[s, 1, c]], d]
        vp[:] = 0.0
        kijp[:] = 0.0
        kjip[:] = 0.0
        if kinds[s] == 0:
            _pair_singular_rule(pi, pj, normals[i], normals[j], bx0, by0, w0, p0, k.real, k.imag, vp, kijp, kjip, buf)
        elif kinds[s] == 1:
            _pair_singular_rule(pi, pj, normals[i], normals[j], bx1, by1, w1, p1, k.real, k.imag, vp, kijp, kjip, buf)
        else:
            _pair_singular_rule(pi, pj, normals[i], normals[j], bx2, by2, w2, p2, k.real, k.imag, vp, kijp, kjip, buf)
        # undo the vertex permutation
        for a in range(3):
            for b in range(3):
                ia = perms[s, 0, a]
                jb = perms[s, 1, b]
                v[ia, jb] = vp[a, b]
                kij[ia, jb] = kijp[a, b]
                kji[jb, ia] = kjip[b, a]
        if i == j:
            # the exact coincident integrals are symmetric in (x, y)
            for a in range(3):
                for b in range(a + 1, 3):
                    m = 0.5 * (v[a, b] + v[b, a])
                    v[a, b] = m
                    v[b, a] = m
        _scatter(i, j, v, kij, kji, 4.0 * areas[i] * areas[j], k * k, normals[i], normals[j], curls,
                 map_n, map_d, want_v, want_k, want_w, out_v, out_k, out_w)


@nb.njit(cache=True, error_model="numpy")
def potentials(points, verts, tris, normals, areas, centroids, diams, k, map_n, map_d,
               b_far, w_far, b_mid, w_mid, b_near, w_near, mid_ratio, near_ratio,
               out_sl, out_dl):
    """Single- and double-layer potential matrices at exterior points.

    ``out_sl[p, n] += int G(x_p, y) phi_n(y)`` over the Neumann space and
    ``out_dl[p, d] += int dG/dn_y(x_p, y) phi_d(y)`` over the Dirichlet space.
    """
    npts = points.shape[0]
    nt = tris.shape[0]
    kre = k.real
    kim = k.imag
    pj = np.empty((3, 3))
    for j in range(nt):
        for c in range(3):
            for d in range(3):
                pj[c, d] = verts[tris[j, c], d]
        nj = normals[j]
        for p in range(npts):
            dx = points[p, 0] - centroids[j, 0]
            dy = points[p, 1] - centroids[j, 1]
            dz = points[p, 2] - centroids[j, 2]
            ratio = math.sqrt(dx * dx + dy * dy + dz * dz) / diams[j]
            if ratio < near_ratio:
                bq = b_near
                wq = w_near
            elif ratio < mid_ratio:
                bq = b_mid
                wq = w_mid
            else:
                bq = b_far
                wq = w_far
            s0 = 0.0j
            s1 = 0.0j
            s2 = 0.0j
            t0 = 0.0j
            t1 = 0.0j
            t2 = 0.0j
            for q in range(wq.shape[0]):
                y0 = bq[q, 0] * pj[0, 0] + bq[q, 1] * pj[1, 0] + bq[q, 2] * pj[2, 0]
                y1 = bq[q, 0] * pj[0, 1] + bq[q, 1] * pj[1, 1] + bq[q, 2] * pj[2, 1]
                y2 = bq[q, 0] * pj[0, 2] + bq[q, 1] * pj[1, 2] + bq[q, 2] * pj[2, 2]
                d0 = y0 - points[p, 0]
                d1 = y1 - points[p, 1]
                d2 = y2 - points[p, 2]
                r = math.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
                gr, gi, fr, fi = _kernel(kre, kim, r)
                gw = wq[q] * (gr + 1j * gi)
                fw = wq[q] * (fr + 1j * fi) * (d0 * nj[0] + d1 * nj[1] + d2 * nj[2])
                s0 += gw * bq[q, 0]
                s1 += gw * bq[q, 1]
                s2 += gw * bq[q, 2]
                t0 += fw * bq[q, 0]
                t1 += fw * bq[q, 1]
                t2 += fw * bq[q, 2]
            a = areas[j]
            out_sl[p, map_n[j, 0]] += a * s0
            out_sl[p, map_n[j, 1]] += a * s1
            out_sl[p, map_n[j, 2]] += a * s2
            out_dl[p, map_d[j, 0]] += a * t0
            out_dl[p, map_d[j, 1]] += a * t1
            out_dl[p, map_d[j, 2]] += a * t2
