"""Pixel-aligned Gaussian splats from depth probability volumes, a forward
alpha-blending rasterizer at feature (quarter) resolution, the L2 rendering
loss, and rendering-loss-driven refinement of the probability volumes.

One primitive per quarter-res pixel: its center sits on the pixel ray at the
regressed depth, its opacity is the peak probability, its covariance is an
isotropic pixel footprint, and its color is the block-pooled image color.
Refinement runs gradient descent on per-pixel plane logits; gradients flow
analytically through softmax -> depth regression -> splat parameters ->
projection -> alpha compositing, which a central finite-difference check can
verify end to end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mvsweep.camera import CameraView, DOWNSAMPLE, EPS_Z, ray_grid
from mvsweep.costvol import DepthPlanes, block_mean, regress_depth

# Alpha-compositing constants: per-primitive opacity clamp, support cutoff at
# 3 sigma (power = 0.5 * 3^2), screen-space covariance dilation, and the
# minimum accumulated alpha below which rendered depth is left at 0.
ALPHA_CLAMP = 0.999
POWER_CUTOFF = 4.5
COV_DILATION = 0.3
EPS_ALPHA = 1e-4


@dataclass
class GaussianSplatSet:
    """Struct-of-arrays collection of 3D Gaussian primitives."""

    means: np.ndarray  # (N, 3) world centers, meters
    opacities: np.ndarray  # (N,) in [0, 1]
    quaternions: np.ndarray  # (N, 4) unit, (w, x, y, z)
    scales: np.ndarray  # (N, 3) stddevs, meters, > 0
    colors: np.ndarray  # (N, 3) RGB in [0, 1]
    source_view: np.ndarray  # (N,) provenance view index
    pixel_rows: np.ndarray  # (N,)
    pixel_cols: np.ndarray  # (N,)

    def __post_init__(self):
        n = self.means.shape[0]
        for name in ("opacities", "quaternions", "scales", "colors", "source_view",
                     "pixel_rows", "pixel_cols"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"field {name} length mismatch")
        if n:
            norms = np.linalg.norm(self.quaternions, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-9):
                raise ValueError("quaternions must be unit length")
            if np.any(self.scales <= 0):
                raise ValueError("scales must be positive")
            if np.any((self.opacities < 0) | (self.opacities > 1)):
                raise ValueError("opacities must lie in [0, 1]")

    def __len__(self) -> int:
        return self.means.shape[0]

    def covariances(self) -> np.ndarray:
        """(N, 3, 3) world covariances R diag(s^2) R^T."""
        r = quaternion_to_rotation(self.quaternions)
        s2 = self.scales**2
        return np.einsum("nij,nj,nkj->nik", r, s2, r)


def quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    """Unit quaternions (w, x, y, z) -> rotation matrices, vectorized."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        axis=-2,
    )


def concat_splats(sets: list[GaussianSplatSet]) -> GaussianSplatSet:
    return GaussianSplatSet(
        *[
            np.concatenate([getattr(s, f) for s in sets])
            for f in ("means", "opacities", "quaternions", "scales", "colors",
                      "source_view", "pixel_rows", "pixel_cols")
        ]
    )


@dataclass
class RenderTarget:
    color: np.ndarray  # (H, W, 3)
    depth: np.ndarray  # (H, W) camera-frame meters, 0 where alpha < EPS_ALPHA
    alpha: np.ndarray  # (H, W) accumulated alpha in [0, 1]


def build_splats(
    view: CameraView,
    probs: np.ndarray,
    planes: DepthPlanes,
    image: np.ndarray,
    footprint_scale: float = 1.0,
    source_index: int = 0,
) -> GaussianSplatSet:
    """One Gaussian per quarter-res pixel of `view`.

    Center: pixel ray at the regressed depth.  Opacity: the peak plane
    probability.  Covariance: isotropic with sigma = footprint_scale * depth
    / mean focal length at quarter scale (one pixel footprint).  Color: the
    4x4 block mean of the full-res image.
    """
    k, gw, gh = view.scaled(DOWNSAMPLE)
    if probs.shape[:2] != (gh, gw):
        raise ValueError("probability volume does not match the view's feature grid")
    depth = regress_depth(probs, planes)  # (gh, gw)
    origin, dirs, axis_cos = ray_grid(view, DOWNSAMPLE)
    means = origin + (depth / axis_cos)[..., None] * dirs
    alphas = probs.max(axis=2)
    f_mean = 0.5 * (k.fx + k.fy)
    sigma = footprint_scale * depth / f_mean
    colors = block_mean(np.asarray(image, dtype=np.float64))
    n = gh * gw
    rows, cols = np.meshgrid(np.arange(gh), np.arange(gw), indexing="ij")
    quats = np.zeros((n, 4))
    quats[:, 0] = 1.0
    return GaussianSplatSet(
        means=means.reshape(n, 3),
        opacities=alphas.reshape(n),
        quaternions=quats,
        scales=np.repeat(sigma.reshape(n, 1), 3, axis=1),
        colors=colors.reshape(n, 3),
        source_view=np.full(n, source_index, dtype=np.int64),
        pixel_rows=rows.reshape(n).astype(np.int64),
        pixel_cols=cols.reshape(n).astype(np.int64),
    )


def _project_gaussians(splats: GaussianSplatSet, view: CameraView):
    """Camera-frame depth, 2D means and 2D covariances for all primitives.

    Returns (keep, z, mean2d, cov2d, jac, cov_cam, fx, fy) over the kept
    (in-front) primitives; cov2d includes the screen-space dilation.
    """
    k, gw, gh = view.scaled(DOWNSAMPLE)
    r = view.pose.rotation
    x_cam = splats.means @ r.T + view.pose.translation  # (N, 3)
    z = x_cam[:, 2]
    keep = z > EPS_Z
    x_cam = x_cam[keep]
    z = z[keep]
    mean2d = np.stack(
        [k.fx * x_cam[:, 0] / z + k.cx, k.fy * x_cam[:, 1] / z + k.cy], axis=1
    )
    # Perspective Jacobian at the camera-frame center (2x3 per primitive).
    n = x_cam.shape[0]
    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = k.fx / z
    jac[:, 0, 2] = -k.fx * x_cam[:, 0] / z**2
    jac[:, 1, 1] = k.fy / z
    jac[:, 1, 2] = -k.fy * x_cam[:, 1] / z**2
    cov_world = splats.covariances()[keep]
    cov_cam = np.einsum("ij,njk,lk->nil", r, cov_world, r)
    cov2d = np.einsum("nij,njk,nlk->nil", jac, cov_cam, jac)
    cov2d[:, 0, 0] += COV_DILATION
    cov2d[:, 1, 1] += COV_DILATION
    return keep, x_cam, z, mean2d, cov2d, jac, cov_cam, k, gw, gh


def _gather_pairs(mean2d, cov2d, z, gw, gh):
    """Enumerate (primitive, pixel) pairs within the 3-sigma support.

    Returns pair arrays sorted by (pixel, depth, primitive index):
    prim (P,), pixel id (P,), delta (P, 2), inv_cov (P, 2, 2), power (P,).
    """
    a = cov2d[:, 0, 0]
    b = cov2d[:, 0, 1]
    c = cov2d[:, 1, 1]
    lam_max = 0.5 * (a + c) + np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    radius = 3.0 * np.sqrt(lam_max)
    x0 = np.maximum(np.ceil(mean2d[:, 0] - radius), 0).astype(np.int64)
    x1 = np.minimum(np.floor(mean2d[:, 0] + radius), gw - 1).astype(np.int64)
    y0 = np.maximum(np.ceil(mean2d[:, 1] - radius), 0).astype(np.int64)
    y1 = np.minimum(np.floor(mean2d[:, 1] + radius), gh - 1).astype(np.int64)
    nx = np.maximum(x1 - x0 + 1, 0)
    ny = np.maximum(y1 - y0 + 1, 0)
    counts = nx * ny
    on_screen = counts > 0
    idx = np.flatnonzero(on_screen)
    if idx.size == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, np.zeros((0, 2)), np.zeros((0, 2, 2)), np.zeros(0)

    reps = counts[idx]
    prim = np.repeat(idx, reps)
    # Per-pair pixel coordinates: row-major offset within each bbox.
    offsets = np.arange(reps.sum()) - np.repeat(np.cumsum(reps) - reps, reps)
    w_per = np.repeat(nx[idx], reps)
    px = np.repeat(x0[idx], reps) + offsets % w_per
    py = np.repeat(y0[idx], reps) + offsets // w_per

    det = a * c - b * b
    inv = np.empty_like(cov2d)
    inv[:, 0, 0] = c / det
    inv[:, 1, 1] = a / det
    inv[:, 0, 1] = inv[:, 1, 0] = -b / det

    delta = np.stack([px - mean2d[prim, 0], py - mean2d[prim, 1]], axis=1)
    pinv = inv[prim]
    power = 0.5 * (
        delta[:, 0] ** 2 * pinv[:, 0, 0]
        + 2.0 * delta[:, 0] * delta[:, 1] * pinv[:, 0, 1]
        + delta[:, 1] ** 2 * pinv[:, 1, 1]
    )
    inside = power <= POWER_CUTOFF
    prim = prim[inside]
    pid = (py[inside] * gw + px[inside]).astype(np.int64)
    delta = delta[inside]
    power = power[inside]

    order = np.lexsort((prim, z[prim], pid))
    return prim[order], pid[order], delta[order], inv, power[order]


def _composite(prim, pid, power, z, alphas, colors, gw, gh):
    """Front-to-back alpha blending over depth-sorted pairs.

    Returns (color, depth, alpha images, per-pair alpha_eff, transmittance,
    clamped mask) -- the per-pair values feed the backward pass.
    """
    if prim.size == 0:
        zero = np.zeros((gh, gw))
        empty = np.zeros(0)
        return np.zeros((gh, gw, 3)), zero, zero.copy(), empty, empty, empty, empty.astype(bool)

    g = np.exp(-power)
    alpha_raw = alphas[prim] * g
    clamped = alpha_raw > ALPHA_CLAMP
    alpha_eff = np.where(clamped, ALPHA_CLAMP, alpha_raw)

    # Segmented exclusive cumulative product of (1 - alpha) by pixel id.
    log_t = np.log1p(-alpha_eff)
    csum = np.cumsum(log_t)
    seg_start = np.flatnonzero(np.r_[True, pid[1:] != pid[:-1]])
    base = np.repeat(csum[seg_start] - log_t[seg_start], np.diff(np.r_[seg_start, pid.size]))
    trans = np.exp(csum - log_t - base)  # exclusive product

    w = alpha_eff * trans
    n_px = gh * gw
    wc = w[:, None] * colors[prim]
    color = np.stack(
        [np.bincount(pid, weights=wc[:, ch], minlength=n_px) for ch in range(3)], axis=1
    )
    acc = np.bincount(pid, weights=w, minlength=n_px)
    depth_num = np.bincount(pid, weights=w * z[prim], minlength=n_px)
    depth = np.where(acc > EPS_ALPHA, depth_num / np.maximum(acc, EPS_ALPHA), 0.0)
    return (
        color.reshape(gh, gw, 3),
        depth.reshape(gh, gw),
        acc.reshape(gh, gw),
        g,
        alpha_eff,
        trans,
        clamped,
    )


def rasterize(splats: GaussianSplatSet, view: CameraView) -> RenderTarget:
    """Render the splat set into the quarter-res grid of `view`.

    Primitives behind the camera are culled; each survivor is projected with
    the perspective Jacobian, dilated in screen space, and composited
    front-to-back (depth ties broken by primitive index) within 3 sigma of
    its 2D mean.
    """
    keep, x_cam, z, mean2d, cov2d, jac, cov_cam, k, gw, gh = _project_gaussians(splats, view)
    alphas = splats.opacities[keep]
    colors = splats.colors[keep]
    prim, pid, delta, inv, power = _gather_pairs(mean2d, cov2d, z, gw, gh)
    color, depth, acc, *_ = _composite(prim, pid, power, z, alphas, colors, gw, gh)
    return RenderTarget(color=color, depth=depth, alpha=acc)


def rendering_loss(rendered: RenderTarget, target_image: np.ndarray) -> float:
    """Mean squared color error over pixels and channels."""
    if rendered.color.shape != target_image.shape:
        raise ValueError("rendered/target shape mismatch")
    diff = rendered.color - target_image
    return float(np.mean(diff * diff))


def select_novel_sources(views: list[CameraView], novel: CameraView, count: int) -> list[int]:
    """Indices of the `count` views nearest to the novel camera center
    (ties to the lower index)."""
    if count > len(views):
        raise ValueError("count exceeds the number of views")
    center = novel.pose.camera_center()
    dists = np.array([np.linalg.norm(v.pose.camera_center() - center) for v in views])
    order = np.lexsort((np.arange(len(views)), dists))
    return [int(i) for i in order[:count]]


# ---------------------------------------------------------------------------
# analytic backward pass and refinement
# ---------------------------------------------------------------------------


def _render_vjp(splats: GaussianSplatSet, view: CameraView, target_image: np.ndarray):
    """Loss and gradients of the L2 rendering loss for one target view.

    Returns (loss, d_means (N, 3), d_alphas (N,), d_sigma (N,)) where sigma
    is the isotropic scale (all three scale entries assumed equal, as
    build_splats produces).
    """
    keep, x_cam, z, mean2d, cov2d, jac, cov_cam, k, gw, gh = _project_gaussians(splats, view)
    alphas = splats.opacities[keep]
    colors = splats.colors[keep]
    prim, pid, delta, inv, power = _gather_pairs(mean2d, cov2d, z, gw, gh)
    color, depth, acc, g_pair, alpha_eff, trans, clamped = _composite(
        prim, pid, power, z, alphas, colors, gw, gh
    )

    diff = color - target_image
    loss = float(np.mean(diff * diff))
    d_color = (2.0 / diff.size) * diff.reshape(-1, 3)  # (gh*gw, 3)

    n_kept = z.size
    if prim.size == 0:
        d_means = np.zeros_like(splats.means)
        return loss, d_means, np.zeros(len(splats)), np.zeros(len(splats))

    # Suffix sums within each pixel segment: S_e = contributions after e.
    w_pair = alpha_eff * trans
    contrib = w_pair[:, None] * colors[prim]  # (P, 3)
    csum = np.cumsum(contrib, axis=0)
    seg_start = np.flatnonzero(np.r_[True, pid[1:] != pid[:-1]])
    seg_len = np.diff(np.r_[seg_start, pid.size])
    seg_end = seg_start + seg_len - 1
    total = csum[seg_end]  # (S, 3) inclusive totals per segment
    seg_of_pair = np.repeat(np.arange(seg_start.size), seg_len)
    suffix = total[seg_of_pair] - csum  # contributions strictly after e

    dc = d_color[pid]  # (P, 3)
    d_alpha_eff = np.einsum(
        "pc,pc->p", dc, colors[prim] * trans[:, None] - suffix / (1.0 - alpha_eff)[:, None]
    )
    live = ~clamped
    d_g = np.where(live, alphas[prim] * d_alpha_eff, 0.0)
    d_alpha_pair = np.where(live, g_pair * d_alpha_eff, 0.0)
    gp = d_g * g_pair  # = -dL/dpower

    pinv = inv[prim]
    pd = np.einsum("pij,pj->pi", pinv, delta)  # P Delta
    d_mean2d_pair = gp[:, None] * pd
    d_cov2d_pair = 0.5 * gp[:, None, None] * np.einsum("pi,pj->pij", pd, pd)

    d_alpha_kept = np.bincount(prim, weights=d_alpha_pair, minlength=n_kept)
    d_mean2d = np.stack(
        [np.bincount(prim, weights=d_mean2d_pair[:, i], minlength=n_kept) for i in range(2)],
        axis=1,
    )
    d_cov2d = np.stack(
        [
            np.bincount(prim, weights=d_cov2d_pair[:, i, j], minlength=n_kept)
            for i in range(2)
            for j in range(2)
        ],
        axis=1,
    ).reshape(n_kept, 2, 2)

    # Projection backward: mean2d and cov2d -> camera point and sigma.
    d_xcam = np.einsum("nji,nj->ni", jac, d_mean2d)  # J^T dmean
    d_jac = 2.0 * np.einsum("nij,njk,nkl->nil", d_cov2d, jac, cov_cam)
    d_cov_cam = np.einsum("nji,njk,nkl->nil", jac, d_cov2d, jac)

    fx, fy = k.fx, k.fy
    x, y = x_cam[:, 0], x_cam[:, 1]
    z2 = z * z
    d_xcam[:, 0] += d_jac[:, 0, 2] * (-fx / z2)
    d_xcam[:, 1] += d_jac[:, 1, 2] * (-fy / z2)
    d_xcam[:, 2] += (
        d_jac[:, 0, 0] * (-fx / z2)
        + d_jac[:, 1, 1] * (-fy / z2)
        + d_jac[:, 0, 2] * (2.0 * fx * x / (z2 * z))
        + d_jac[:, 1, 2] * (2.0 * fy * y / (z2 * z))
    )

    d_means_kept = d_xcam @ view.pose.rotation  # R^T applied row-wise
    sigma = splats.scales[keep, 0]
    d_sigma_kept = 2.0 * sigma * np.trace(d_cov_cam, axis1=1, axis2=2)

    d_means = np.zeros_like(splats.means)
    d_alphas = np.zeros(len(splats))
    d_sigmas = np.zeros(len(splats))
    keep_idx = np.flatnonzero(keep)
    d_means[keep_idx] = d_means_kept
    d_alphas[keep_idx] = d_alpha_kept
    d_sigmas[keep_idx] = d_sigma_kept
    return loss, d_means, d_alphas, d_sigmas


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def refinement_loss_and_grad(
    logits: list[np.ndarray],
    planes: DepthPlanes,
    source_views: list[CameraView],
    source_images: list[np.ndarray],
    novel_views: list[CameraView],
    novel_images: list[np.ndarray],
    footprint_scale: float = 1.0,
):
    """Summed rendering loss over the novel views and its analytic gradient
    with respect to the per-pixel plane logits of every source view.

    novel_images must already be quarter resolution.  The gradient chains
    softmax -> (depth regression, peak-probability opacity) -> splat center
    and footprint -> projection -> alpha compositing.
    """
    probs = [_softmax(lg) for lg in logits]
    sets = [
        build_splats(v, p, planes, img, footprint_scale, source_index=i)
        for i, (v, p, img) in enumerate(zip(source_views, probs, source_images))
    ]
    splats = concat_splats(sets)

    total_loss = 0.0
    d_means = np.zeros_like(splats.means)
    d_alphas = np.zeros(len(splats))
    d_sigmas = np.zeros(len(splats))
    for view, img in zip(novel_views, novel_images):
        loss, dm, da, ds = _render_vjp(splats, view, img)
        total_loss += loss
        d_means += dm
        d_alphas += da
        d_sigmas += ds
    if not np.isfinite(total_loss):
        raise ValueError("rendering loss is not finite")

    grads = []
    offset = 0
    for vi, (view, p, lg) in enumerate(zip(source_views, probs, logits)):
        gh, gw = p.shape[:2]
        n = gh * gw
        dm = d_means[offset : offset + n].reshape(gh, gw, 3)
        da = d_alphas[offset : offset + n].reshape(gh, gw)
        ds = d_sigmas[offset : offset + n].reshape(gh, gw)
        offset += n

        k, _, _ = view.scaled(DOWNSAMPLE)
        f_mean = 0.5 * (k.fx + k.fy)
        _, dirs, axis_cos = ray_grid(view, DOWNSAMPLE)
        # depth -> (center along ray, isotropic footprint)
        d_depth = (
            np.einsum("hwc,hwc->hw", dm, dirs) / axis_cos + ds * footprint_scale / f_mean
        )
        # softmax VJP: upstream on B is d_depth * plane + da on the argmax bin
        up = d_depth[..., None] * planes.depths[None, None, :]
        arg = p.argmax(axis=2)
        rows, cols = np.meshgrid(np.arange(gh), np.arange(gw), indexing="ij")
        up_max = np.zeros_like(up)
        up_max[rows, cols, arg] = da
        up = up + up_max
        inner = (up * p).sum(axis=2, keepdims=True)
        grads.append(p * (up - inner))
    return total_loss, grads


@dataclass
class RefinementResult:
    volumes: list[np.ndarray]  # refined probability volumes per source view
    loss_trace: list[float]  # initial loss followed by one entry per step


def refine_probability_volume(
    volumes: list[np.ndarray],
    planes: DepthPlanes,
    source_views: list[CameraView],
    source_images: list[np.ndarray],
    novel_views: list[CameraView],
    novel_images: list[np.ndarray],
    steps: int,
    step_size: float,
    footprint_scale: float = 1.0,
) -> RefinementResult:
    """Gradient-descent refinement of probability volumes under the summed
    novel-view rendering loss.

    Optimizes per-pixel plane logits (softmax keeps every volume normalized
    by construction).  Each step moves against the gradient, scaled so the
    largest logit update equals the step size, and is accepted only if the
    loss does not increase; otherwise the step is halved, up to 8 times.
    When no halving helps the remaining steps are skipped (the trace repeats
    the stalled loss so its length stays steps + 1).
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if not novel_views:
        raise ValueError("need at least one novel view")
    if len(novel_views) != len(novel_images):
        raise ValueError("novel views/images mismatch")
    novel_quarter = [
        img if img.shape[0] == v.height // DOWNSAMPLE else block_mean(img)
        for v, img in zip(novel_views, novel_images)
    ]
    logits = [np.log(np.clip(v, 1e-12, None)) for v in volumes]

    def evaluate(lgs):
        return refinement_loss_and_grad(
            lgs, planes, source_views, source_images, novel_views, novel_quarter,
            footprint_scale,
        )

    loss, grads = evaluate(logits)
    trace = [loss]
    for _ in range(steps):
        gmax = max(float(np.max(np.abs(g))) for g in grads)
        if gmax == 0.0:
            trace.extend([trace[-1]] * (steps + 1 - len(trace)))
            break
        direction = [g / gmax for g in grads]
        lr = step_size
        accepted = False
        for _ in range(9):  # initial step plus up to 8 halvings
            trial = [lg - lr * d for lg, d in zip(logits, direction)]
            trial_loss, trial_grads = evaluate(trial)
            if trial_loss <= trace[-1]:
                logits = trial
                loss, grads = trial_loss, trial_grads
                accepted = True
                break
            lr *= 0.5
        trace.append(loss if accepted else trace[-1])
        if not accepted:
            trace.extend([trace[-1]] * (steps + 1 - len(trace)))
            break
    return RefinementResult(volumes=[_softmax(lg) for lg in logits], loss_trace=trace)
