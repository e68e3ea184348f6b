"""Pure-numpy compositing kernels (fallback backend).

Semantics shared with the compiled backend: gaussians are walked in the given
front-to-back order; a pixel receives a contribution when its center lies
inside the 3-sigma disk; per-splat alpha is opacity * exp(-r^2 / (2 sigma^2))
clamped to 0.99. The backward pass reconstructs per-pixel transmittance by
walking the same splats back-to-front from the stored final transmittance.
"""

import numpy as np

_ALPHA_CLAMP = 0.99


def _bbox(mx, my, s3, width, height):
    x0 = max(0, int(np.floor(mx - s3)))
    x1 = min(width - 1, int(np.ceil(mx + s3)))
    y0 = max(0, int(np.floor(my - s3)))
    y1 = min(height - 1, int(np.ceil(my + s3)))
    return x0, x1, y0, y1


def composite_forward(order, mean2d, sigma, depth, color, opacity, background,
                      width, height):
    """Front-to-back alpha compositing.

    Returns (rgb, alpha, tfinal, depth_img); depth_img is +inf where nothing
    contributed.
    """
    rgb = np.zeros((height, width, 3))
    trans = np.ones((height, width))
    depth_num = np.zeros((height, width))

    for gi in order:
        mx, my = mean2d[gi]
        sg = sigma[gi]
        s3 = 3.0 * sg
        x0, x1, y0, y1 = _bbox(mx, my, s3, width, height)
        if x1 < x0 or y1 < y0:
            continue
        px = np.arange(x0, x1 + 1) + 0.5
        py = np.arange(y0, y1 + 1) + 0.5
        r2 = (px[None, :] - mx) ** 2 + (py[:, None] - my) ** 2
        inside = r2 <= 9.0 * sg * sg
        if not inside.any():
            continue
        g = np.exp(-r2 / (2.0 * sg * sg))
        a = np.minimum(opacity[gi] * g, _ALPHA_CLAMP)
        a = np.where(inside, a, 0.0)

        t_slice = trans[y0:y1 + 1, x0:x1 + 1]
        w = a * t_slice
        rgb[y0:y1 + 1, x0:x1 + 1] += w[:, :, None] * color[gi]
        depth_num[y0:y1 + 1, x0:x1 + 1] += w * depth[gi]
        trans[y0:y1 + 1, x0:x1 + 1] = t_slice * (1.0 - a)

    alpha = 1.0 - trans
    rgb = rgb + trans[:, :, None] * background
    with np.errstate(invalid="ignore", divide="ignore"):
        depth_img = np.where(alpha > 0.0, depth_num / np.maximum(alpha, 1e-300), np.inf)
    return rgb, alpha, trans, depth_img


def composite_backward(order, mean2d, sigma, depth, color, opacity, background,
                       tfinal, u_rgb, u_alpha, width, height):
    """Exact reverse-mode gradients of composite_forward.

    Walks gaussians back-to-front, rebuilding each splat's entry transmittance
    as T_i = T_{i+1} / (1 - a_i); splats clamped at 0.99 get zero gradient
    through their own alpha (flat region of the clamp).
    """
    n = mean2d.shape[0]
    d_mean2d = np.zeros((n, 2))
    d_sigma = np.zeros(n)
    d_color = np.zeros((n, 3))
    d_opacity = np.zeros(n)

    t_cur = tfinal.copy()
    suffix = np.zeros((height, width, 3))  # sum of a_k T_k c_k over splats behind i
    bg_term = tfinal[:, :, None] * background

    for gi in order[::-1]:
        mx, my = mean2d[gi]
        sg = sigma[gi]
        s3 = 3.0 * sg
        x0, x1, y0, y1 = _bbox(mx, my, s3, width, height)
        if x1 < x0 or y1 < y0:
            continue
        px = np.arange(x0, x1 + 1) + 0.5
        py = np.arange(y0, y1 + 1) + 0.5
        r2 = (px[None, :] - mx) ** 2 + (py[:, None] - my) ** 2
        inside = r2 <= 9.0 * sg * sg
        if not inside.any():
            continue
        g = np.exp(-r2 / (2.0 * sg * sg))
        raw = opacity[gi] * g
        a = np.where(inside, np.minimum(raw, _ALPHA_CLAMP), 0.0)

        sl = (slice(y0, y1 + 1), slice(x0, x1 + 1))
        one_m = 1.0 - a
        t_i = t_cur[sl] / one_m
        ur = u_rgb[sl]

        # d loss / d a_i: own term minus everything behind, plus alpha output
        grad_a = np.einsum("yxc,yxc->yx", ur,
                           t_i[:, :, None] * color[gi]
                           - (suffix[sl] + bg_term[sl]) / one_m[:, :, None])
        grad_a = grad_a + u_alpha[sl] * tfinal[sl] / one_m

        w = a * t_i
        d_color[gi] += np.einsum("yxc,yx->c", ur, w)

        live = inside & (raw < _ALPHA_CLAMP)
        grad_a = np.where(live, grad_a, 0.0)
        d_opacity[gi] += np.sum(grad_a * g, where=live)
        dg = grad_a * opacity[gi]
        inv_s2 = 1.0 / (sg * sg)
        d_mean2d[gi, 0] += np.sum(dg * g * (px[None, :] - mx) * inv_s2, where=live)
        d_mean2d[gi, 1] += np.sum(dg * g * (py[:, None] - my) * inv_s2, where=live)
        d_sigma[gi] += np.sum(dg * g * r2 / (sg ** 3), where=live)

        suffix[sl] += w[:, :, None] * color[gi]
        t_cur[sl] = t_i

    return d_mean2d, d_sigma, d_color, d_opacity
