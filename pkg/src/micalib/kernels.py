"""Hot loops: projection + feature lookup + joint binning, and ray casting.

Every kernel exists twice. ``*_nb`` are numba loops, ``*_np`` are vectorized
numpy with the same floating-point operation order, so both paths agree
bit-for-bit on the same machine. The public names are bound to one of the two
according to :data:`micalib._accel.USE_NUMBA`.
"""
import math

import numpy as np

from ._accel import USE_NUMBA, njit

NEAR_EPS = 1e-6
RAY_EPS = 1e-9

# layout of the camera parameter vector (see CameraModel.kernel_params)
_MODEL, _FX, _FY, _CX, _CY, _XI, _ALPHA, _W, _H = range(9)


# ---------------------------------------------------------------- numba path

@njit
def _project_one_nb(x, y, z, cam, w2):
    """Return (u, v, ok) for one camera-frame point."""
    fx = cam[_FX]
    fy = cam[_FY]
    if cam[_MODEL] == 0.0:
        if not z > NEAR_EPS:
            return 0.0, 0.0, False
        denom = z
    else:
        xi = cam[_XI]
        alpha = cam[_ALPHA]
        d1 = math.sqrt(x * x + y * y + z * z)
        zs = xi * d1 + z
        d2 = math.sqrt(x * x + y * y + zs * zs)
        denom = alpha * d2 + (1.0 - alpha) * zs
        if not (denom > NEAR_EPS and z > -w2 * d1):
            return 0.0, 0.0, False
    u = fx * x / denom + cam[_CX]
    v = fy * y / denom + cam[_CY]
    if not (u >= 0.0 and u < cam[_W] and v >= 0.0 and v < cam[_H]):
        return u, v, False
    return u, v, True


@njit
def _match_pixels_nb(points, R, t, cam, w2, valid):
    n = points.shape[0]
    width = valid.shape[1]
    height = valid.shape[0]
    idx = np.empty(n, dtype=np.int64)
    rows = np.empty(n, dtype=np.int64)
    cols = np.empty(n, dtype=np.int64)
    m = 0
    for k in range(n):
        px = points[k, 0]
        py = points[k, 1]
        pz = points[k, 2]
        x = R[0, 0] * px + R[0, 1] * py + R[0, 2] * pz + t[0]
        y = R[1, 0] * px + R[1, 1] * py + R[1, 2] * pz + t[1]
        z = R[2, 0] * px + R[2, 1] * py + R[2, 2] * pz + t[2]
        u, v, ok = _project_one_nb(x, y, z, cam, w2)
        if not ok:
            continue
        c = int(math.floor(u + 0.5))
        r = int(math.floor(v + 0.5))
        if c >= width or r >= height:
            continue
        if not valid[r, c]:
            continue
        idx[m] = k
        rows[m] = r
        cols[m] = c
        m += 1
    return idx[:m], rows[:m], cols[:m]


@njit
def _bin_index_nb(value, lo, hi, nbins):
    b = int(math.floor((value - lo) / (hi - lo) * nbins))
    if b < 0:
        return 0
    if b >= nbins:
        return nbins - 1
    return b


@njit
def _frame_counts_nb(points, lidar_feat, image, R, t, cam, w2, nbins, lo_l, hi_l, lo_c, hi_c):
    n = points.shape[0]
    height = image.shape[0]
    width = image.shape[1]
    counts = np.zeros((nbins, nbins), dtype=np.int64)
    m = 0
    for k in range(n):
        px = points[k, 0]
        py = points[k, 1]
        pz = points[k, 2]
        x = R[0, 0] * px + R[0, 1] * py + R[0, 2] * pz + t[0]
        y = R[1, 0] * px + R[1, 1] * py + R[1, 2] * pz + t[1]
        z = R[2, 0] * px + R[2, 1] * py + R[2, 2] * pz + t[2]
        u, v, ok = _project_one_nb(x, y, z, cam, w2)
        if not ok:
            continue
        c = int(math.floor(u + 0.5))
        r = int(math.floor(v + 0.5))
        if c >= width or r >= height:
            continue
        f_cam = image[r, c]
        if not math.isfinite(f_cam):
            continue
        i = _bin_index_nb(lidar_feat[k], lo_l, hi_l, nbins)
        j = _bin_index_nb(f_cam, lo_c, hi_c, nbins)
        counts[i, j] += 1
        m += 1
    return counts, m


@njit
def _binned_counts_nb(points, lidar_bin, cam_bin, R, t, cam, w2, nbins):
    # scalars hoisted and one loop per camera model: this is the hot loop
    height = cam_bin.shape[0]
    width = cam_bin.shape[1]
    counts = np.zeros((nbins, nbins), dtype=np.int64)
    r00 = R[0, 0]; r01 = R[0, 1]; r02 = R[0, 2]
    r10 = R[1, 0]; r11 = R[1, 1]; r12 = R[1, 2]
    r20 = R[2, 0]; r21 = R[2, 1]; r22 = R[2, 2]
    t0 = t[0]; t1 = t[1]; t2 = t[2]
    fx = cam[_FX]; fy = cam[_FY]; cx = cam[_CX]; cy = cam[_CY]
    wf = cam[_W]; hf = cam[_H]
    xi = cam[_XI]; alpha = cam[_ALPHA]
    pinhole = cam[_MODEL] == 0.0
    m = 0
    for k in range(points.shape[0]):
        px = points[k, 0]
        py = points[k, 1]
        pz = points[k, 2]
        z = r20 * px + r21 * py + r22 * pz + t2
        if pinhole:
            if not z > NEAR_EPS:
                continue
            x = r00 * px + r01 * py + r02 * pz + t0
            y = r10 * px + r11 * py + r12 * pz + t1
            denom = z
        else:
            x = r00 * px + r01 * py + r02 * pz + t0
            y = r10 * px + r11 * py + r12 * pz + t1
            d1 = math.sqrt(x * x + y * y + z * z)
            zs = xi * d1 + z
            d2 = math.sqrt(x * x + y * y + zs * zs)
            denom = alpha * d2 + (1.0 - alpha) * zs
            if not (denom > NEAR_EPS and z > -w2 * d1):
                continue
        u = fx * x / denom + cx
        v = fy * y / denom + cy
        if not (u >= 0.0 and u < wf and v >= 0.0 and v < hf):
            continue
        c = int(math.floor(u + 0.5))
        r = int(math.floor(v + 0.5))
        if c >= width or r >= height:
            continue
        j = cam_bin[r, c]
        if j < 0:
            continue
        counts[lidar_bin[k], j] += 1
        m += 1
    return counts, m


@njit
def _counts_mi_nb(counts):
    nr = counts.shape[0]
    nc = counts.shape[1]
    total = 0.0
    hxy = 0.0
    row = np.zeros(nr)
    col = np.zeros(nc)
    for i in range(nr):
        for j in range(nc):
            c = float(counts[i, j])
            if c > 0.0:
                total += c
                hxy += c * math.log(c)
                row[i] += c
                col[j] += c
    if total <= 0.0:
        return np.nan
    hx = 0.0
    for i in range(nr):
        if row[i] > 0.0:
            hx += row[i] * math.log(row[i])
    hy = 0.0
    for j in range(nc):
        if col[j] > 0.0:
            hy += col[j] * math.log(col[j])
    # H = log N - sum(c log c) / N for each of the three tables
    return math.log(total) + (hxy - hx - hy) / total


@njit
def _cast_rays_nb(origin, dirs, boxes, planes, max_range):
    n = dirs.shape[0]
    t_hit = np.full(n, np.inf)
    sid = np.full(n, -1, dtype=np.int64)
    axis = np.full(n, -1, dtype=np.int64)
    nb = boxes.shape[0]
    for k in range(n):
        best = max_range
        best_s = -1
        best_a = -1
        for b in range(nb):
            t_enter = -np.inf
            t_exit = np.inf
            enter_axis = -1
            miss = False
            for a in range(3):
                d = dirs[k, a]
                o = origin[a]
                lo = boxes[b, a]
                hi = boxes[b, a + 3]
                if abs(d) < 1e-15:
                    if o < lo or o > hi:
                        miss = True
                        break
                    continue
                t0 = (lo - o) / d
                t1 = (hi - o) / d
                if t0 > t1:
                    t0, t1 = t1, t0
                if t0 > t_enter:
                    t_enter = t0
                    enter_axis = a
                if t1 < t_exit:
                    t_exit = t1
            if miss or t_enter > t_exit or t_enter <= RAY_EPS:
                continue
            if t_enter < best:
                best = t_enter
                best_s = b
                best_a = enter_axis
        for p in range(planes.shape[0]):
            denom = planes[p, 0] * dirs[k, 0] + planes[p, 1] * dirs[k, 1] + planes[p, 2] * dirs[k, 2]
            if abs(denom) < 1e-12:
                continue
            num = planes[p, 3] - (
                planes[p, 0] * origin[0] + planes[p, 1] * origin[1] + planes[p, 2] * origin[2]
            )
            tp = num / denom
            if tp > RAY_EPS and tp < best:
                best = tp
                best_s = nb + p
                best_a = -1
        if best_s >= 0:
            t_hit[k] = best
            sid[k] = best_s
            axis[k] = best_a
    return t_hit, sid, axis


# ---------------------------------------------------------------- numpy path

def _project_np(x, y, z, cam, w2):
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if cam[_MODEL] == 0.0:
            denom = z
            ok = z > NEAR_EPS
        else:
            xi = cam[_XI]
            alpha = cam[_ALPHA]
            d1 = np.sqrt(x * x + y * y + z * z)
            zs = xi * d1 + z
            d2 = np.sqrt(x * x + y * y + zs * zs)
            denom = alpha * d2 + (1.0 - alpha) * zs
            ok = (denom > NEAR_EPS) & (z > -w2 * d1)
        denom = np.where(ok, denom, 1.0)
        u = cam[_FX] * x / denom + cam[_CX]
        v = cam[_FY] * y / denom + cam[_CY]
        ok &= (u >= 0.0) & (u < cam[_W]) & (v >= 0.0) & (v < cam[_H])
    return u, v, ok


def _transform_np(points, R, t):
    px, py, pz = points[:, 0], points[:, 1], points[:, 2]
    x = R[0, 0] * px + R[0, 1] * py + R[0, 2] * pz + t[0]
    y = R[1, 0] * px + R[1, 1] * py + R[1, 2] * pz + t[1]
    z = R[2, 0] * px + R[2, 1] * py + R[2, 2] * pz + t[2]
    return x, y, z


def _pixels_np(points, R, t, cam, w2, height, width):
    x, y, z = _transform_np(points, R, t)
    u, v, ok = _project_np(x, y, z, cam, w2)
    idx = np.flatnonzero(ok)
    cols = np.floor(u[idx] + 0.5).astype(np.int64)
    rows = np.floor(v[idx] + 0.5).astype(np.int64)
    inside = (cols < width) & (rows < height)
    return idx[inside], rows[inside], cols[inside]


def _match_pixels_np(points, R, t, cam, w2, valid):
    idx, rows, cols = _pixels_np(points, R, t, cam, w2, valid.shape[0], valid.shape[1])
    keep = valid[rows, cols]
    return idx[keep], rows[keep], cols[keep]


def _bin_index_np(values, lo, hi, nbins):
    b = np.floor((values - lo) / (hi - lo) * nbins)
    return np.clip(b, 0, nbins - 1).astype(np.int64)


def _frame_counts_np(points, lidar_feat, image, R, t, cam, w2, nbins, lo_l, hi_l, lo_c, hi_c):
    idx, rows, cols = _pixels_np(points, R, t, cam, w2, image.shape[0], image.shape[1])
    f_cam = image[rows, cols]
    keep = np.isfinite(f_cam)
    i = _bin_index_np(lidar_feat[idx[keep]], lo_l, hi_l, nbins)
    j = _bin_index_np(f_cam[keep], lo_c, hi_c, nbins)
    counts = np.bincount(i * nbins + j, minlength=nbins * nbins).reshape(nbins, nbins)
    return counts.astype(np.int64), int(keep.sum())


def _binned_counts_np(points, lidar_bin, cam_bin, R, t, cam, w2, nbins):
    idx, rows, cols = _pixels_np(points, R, t, cam, w2, cam_bin.shape[0], cam_bin.shape[1])
    j = cam_bin[rows, cols]
    keep = j >= 0
    flat = lidar_bin[idx[keep]] * nbins + j[keep]
    counts = np.bincount(flat, minlength=nbins * nbins).reshape(nbins, nbins)
    return counts.astype(np.int64), int(keep.sum())


def _counts_mi_np(counts):
    c = np.asarray(counts, dtype=np.float64)
    total = c.sum()
    if not total > 0:
        return np.nan

    def clogc(a):
        a = a[a > 0]
        return float(np.sum(a * np.log(a)))

    return math.log(total) + (clogc(c) - clogc(c.sum(axis=1)) - clogc(c.sum(axis=0))) / total


def _cast_rays_np(origin, dirs, boxes, planes, max_range, chunk=8192):
    n = dirs.shape[0]
    t_hit = np.full(n, np.inf)
    sid = np.full(n, -1, dtype=np.int64)
    axis = np.full(n, -1, dtype=np.int64)
    nb = boxes.shape[0]
    for start in range(0, n, chunk):
        d = dirs[start:start + chunk]
        m = d.shape[0]
        best = np.full(m, float(max_range))
        best_s = np.full(m, -1, dtype=np.int64)
        best_a = np.full(m, -1, dtype=np.int64)
        if nb:
            t_enter = np.full((m, nb), -np.inf)
            t_exit = np.full((m, nb), np.inf)
            enter_axis = np.full((m, nb), -1, dtype=np.int64)
            miss = np.zeros((m, nb), dtype=bool)
            for a in range(3):
                da = d[:, a][:, None]
                lo = boxes[:, a][None, :]
                hi = boxes[:, a + 3][None, :]
                flat = np.abs(da) < 1e-15
                miss |= flat & ((origin[a] < lo) | (origin[a] > hi))
                with np.errstate(divide="ignore", invalid="ignore"):
                    t0 = (lo - origin[a]) / da
                    t1 = (hi - origin[a]) / da
                near = np.where(flat, -np.inf, np.minimum(t0, t1))
                far = np.where(flat, np.inf, np.maximum(t0, t1))
                upd = near > t_enter
                t_enter = np.where(upd, near, t_enter)
                enter_axis = np.where(upd, a, enter_axis)
                t_exit = np.minimum(t_exit, far)
            hit = ~miss & (t_enter <= t_exit) & (t_enter > RAY_EPS)
            cand = np.where(hit, t_enter, np.inf)
            b = np.argmin(cand, axis=1)
            tb = cand[np.arange(m), b]
            upd = tb < best
            best = np.where(upd, tb, best)
            best_s = np.where(upd, b, best_s)
            best_a = np.where(upd, enter_axis[np.arange(m), b], best_a)
        for p in range(planes.shape[0]):
            denom = planes[p, 0] * d[:, 0] + planes[p, 1] * d[:, 1] + planes[p, 2] * d[:, 2]
            num = planes[p, 3] - (
                planes[p, 0] * origin[0] + planes[p, 1] * origin[1] + planes[p, 2] * origin[2]
            )
            ok = np.abs(denom) >= 1e-12
            with np.errstate(divide="ignore", invalid="ignore"):
                tp = num / np.where(ok, denom, 1.0)
            upd = ok & (tp > RAY_EPS) & (tp < best)
            best = np.where(upd, tp, best)
            best_s = np.where(upd, nb + p, best_s)
            best_a = np.where(upd, -1, best_a)
        got = best_s >= 0
        sl = slice(start, start + m)
        t_hit[sl] = np.where(got, best, np.inf)
        sid[sl] = best_s
        axis[sl] = best_a
    return t_hit, sid, axis


# ---------------------------------------------------------------- dispatch

def double_sphere_w2(cam):
    if cam[_MODEL] == 0.0:
        return 0.0
    xi = cam[_XI]
    alpha = cam[_ALPHA]
    w1 = alpha / (1.0 - alpha) if alpha <= 0.5 else (1.0 - alpha) / alpha
    return (w1 + xi) / math.sqrt(2.0 * w1 * xi + xi * xi + 1.0)


if USE_NUMBA:
    _match_pixels = _match_pixels_nb
    _frame_counts = _frame_counts_nb
    _binned_counts = _binned_counts_nb
    _counts_mi = _counts_mi_nb
    _cast_rays = _cast_rays_nb
else:
    _match_pixels = _match_pixels_np
    _frame_counts = _frame_counts_np
    _binned_counts = _binned_counts_np
    _counts_mi = _counts_mi_np
    _cast_rays = _cast_rays_np

BACKEND = "numba" if USE_NUMBA else "numpy"


def match_pixels(points, R, t, cam, valid, use_numba=None):
    """Indices of points that land on a valid pixel, plus that pixel's (row, col)."""
    fn = _pick(use_numba, _match_pixels_nb, _match_pixels_np, _match_pixels)
    return fn(points, R, t, cam, double_sphere_w2(cam), valid)


def frame_counts(points, lidar_feat, image, R, t, cam, nbins, range_lidar, range_camera,
                 use_numba=None):
    """Joint histogram counts of (lidar feature, image feature) over matched points.

    ``image`` holds NaN at invalid pixels. Returns ``(counts, m)``.
    """
    fn = _pick(use_numba, _frame_counts_nb, _frame_counts_np, _frame_counts)
    return fn(points, lidar_feat, image, R, t, cam, double_sphere_w2(cam), int(nbins),
              float(range_lidar[0]), float(range_lidar[1]),
              float(range_camera[0]), float(range_camera[1]))


def binned_counts(points, lidar_bin, cam_bin, R, t, cam, nbins, use_numba=None):
    """Like :func:`frame_counts` with features already binned.

    ``lidar_bin`` holds one bin per point, ``cam_bin`` one bin per pixel with
    -1 at invalid pixels.
    """
    fn = _pick(use_numba, _binned_counts_nb, _binned_counts_np, _binned_counts)
    return fn(points, lidar_bin, cam_bin, R, t, cam, double_sphere_w2(cam), int(nbins))


def counts_mi(counts, use_numba=None) -> float:
    """Mutual information (nats) of a joint count table; NaN when empty."""
    fn = _pick(use_numba, _counts_mi_nb, _counts_mi_np, _counts_mi)
    return float(fn(counts))


def cast_rays(origin, dirs, boxes, planes, max_range, use_numba=None):
    """First hit of each ray against axis-aligned boxes (rows ``[min xyz, max xyz]``)
    and planes (rows ``[nx, ny, nz, d]`` for ``n . x = d``).

    Returns ``(t, surface, axis)``: hit distance (inf on miss), surface index
    (boxes first, then planes; -1 on miss) and the entry axis for box hits.
    """
    fn = _pick(use_numba, _cast_rays_nb, _cast_rays_np, _cast_rays)
    return fn(np.ascontiguousarray(origin, dtype=np.float64),
              np.ascontiguousarray(dirs, dtype=np.float64),
              np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 6),
              np.ascontiguousarray(planes, dtype=np.float64).reshape(-1, 4),
              float(max_range))


def _pick(use_numba, nb_fn, np_fn, default):
    if use_numba is None:
        return default
    if use_numba and not USE_NUMBA:
        from ._accel import HAS_NUMBA
        if not HAS_NUMBA:
            raise RuntimeError("numba is not installed")
    return nb_fn if use_numba else np_fn
