"""Central-finite-difference verification of every hand-derived backward pass.

Each registered suite draws a batch of random cases, computes analytic
gradients of the scalar probe <G, f(x)> (G random), compares them against
central differences, and reports the worst relative error seen. The error
metric is |a - n| / max(|a|, |n|, 1e-4): purely relative for gradients of
ordinary size, absolute (scaled by 1e4) for entries near zero, so
finite-difference noise (~1e-10 at 64-bit with h = 1e-6) never false-alarms
while sign or indexing bugs always exceed the 1e-4 gate.
"""

from __future__ import annotations

import fnmatch
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import blocks, losses, ops
from .tensor import ConfigError, Tensor

FD_STEP = 1e-6
REL_ERR_FLOOR = 1e-4
PASS_THRESHOLD = 1e-4


def numerical_grad(f: Callable[[np.ndarray], float], x: np.ndarray,
                   h: float = FD_STEP) -> np.ndarray:
    """Central differences of a scalar function, one entry at a time."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray,
                  floor: float = REL_ERR_FLOOR) -> float:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    if a.shape != n.shape:
        raise ConfigError("gradient shapes differ")
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / denom))


@dataclass(frozen=True)
class GradCheckResult:
    name: str
    cases: int
    max_err: float

    @property
    def passed(self) -> bool:
        return self.max_err < PASS_THRESHOLD


_SUITES: dict[str, Callable[[np.random.Generator, int], float]] = {}


def register(name: str):
    def deco(fn):
        _SUITES[name] = fn
        return fn
    return deco


def suite_names() -> list[str]:
    return sorted(_SUITES)


def run_suites(pattern: str = "*", cases: int = 100, seed: int = 0) -> list[GradCheckResult]:
    names = [n for n in suite_names() if fnmatch.fnmatch(n, pattern)]
    if not names:
        raise ConfigError(
            f"no gradient suite matches {pattern!r}; valid names: {', '.join(suite_names())}"
        )
    results = []
    for name in names:
        rng = np.random.Generator(np.random.PCG64(seed))
        results.append(GradCheckResult(name, cases, _SUITES[name](rng, cases)))
    return results


def _probe(rng, shape):
    return rng.standard_normal(shape)


# ---------------------------------------------------------------------------
# tensor_core operators
# ---------------------------------------------------------------------------

@register("conv2d")
def _check_conv2d(rng: np.random.Generator, cases: int) -> float:
    worst = 0.0
    for _ in range(cases):
        cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        k = int(rng.integers(1, 4))
        s = int(rng.integers(1, 3))
        p = int(rng.integers(0, 2))
        h = int(rng.integers(k, k + 4))
        spec = ops.ConvSpec(cin, cout, k, s, p)
        x = _probe(rng, (2, cin, h, h))
        w = _probe(rng, (cout, cin, k, k))
        b = _probe(rng, (cout,))
        g = _probe(rng, (2, cout, spec.out_size(h), spec.out_size(h)))

        def fx(v):
            return float((ops.conv2d_forward(Tensor(v), Tensor(w), b, spec).data * g).sum())

        def fw(v):
            return float((ops.conv2d_forward(Tensor(x), Tensor(v), b, spec).data * g).sum())

        def fb(v):
            return float((ops.conv2d_forward(Tensor(x), Tensor(w), v, spec).data * g).sum())

        gx, gw, gb = ops.conv2d_backward(Tensor(x), Tensor(w), spec, Tensor(g))
        worst = max(worst, max_rel_error(gx.data, numerical_grad(fx, x)))
        worst = max(worst, max_rel_error(gw.data, numerical_grad(fw, w)))
        worst = max(worst, max_rel_error(gb, numerical_grad(fb, b)))
    return worst


@register("fully_connected")
def _check_fc(rng, cases):
    worst = 0.0
    for _ in range(cases):
        nin, nout, batch = int(rng.integers(1, 6)), int(rng.integers(1, 6)), int(rng.integers(1, 4))
        x = _probe(rng, (batch, nin))
        w = _probe(rng, (nout, nin))
        b = _probe(rng, (nout,))
        g = _probe(rng, (batch, nout))
        gx, gw, gb = ops.fully_connected_backward(x, w, g)
        worst = max(worst, max_rel_error(gx, numerical_grad(
            lambda v: float((ops.fully_connected(v, w, b) * g).sum()), x)))
        worst = max(worst, max_rel_error(gw, numerical_grad(
            lambda v: float((ops.fully_connected(x, v, b) * g).sum()), w)))
        worst = max(worst, max_rel_error(gb, numerical_grad(
            lambda v: float((ops.fully_connected(x, w, v) * g).sum()), b)))
    return worst


def _activation_suite(kind):
    def suite(rng, cases):
        worst = 0.0
        for _ in range(cases):
            x = _probe(rng, (2, 3, 4, 4)) * 3.0
            g = _probe(rng, (2, 3, 4, 4))
            ga = ops.activation_backward(Tensor(x), kind, Tensor(g))
            num = numerical_grad(
                lambda v: float((ops.activation(Tensor(v), kind).data * g).sum()), x)
            worst = max(worst, max_rel_error(ga.data, num))
        return worst
    return suite


register("activation_relu")(_activation_suite("relu"))
register("activation_sigmoid")(_activation_suite("sigmoid"))
register("activation_mish")(_activation_suite("mish"))


@register("global_pool")
def _check_global_pool(rng, cases):
    worst = 0.0
    for _ in range(cases):
        kind = "avg" if rng.integers(2) else "max"
        x = _probe(rng, (2, 3, 4, 4))
        g = _probe(rng, (2, 3, 1, 1))
        ga = ops.global_pool_backward(Tensor(x), kind, Tensor(g))
        num = numerical_grad(lambda v: float((ops.global_pool(Tensor(v), kind).data * g).sum()), x)
        worst = max(worst, max_rel_error(ga.data, num))
    return worst


@register("spatial_stats")
def _check_spatial_stats(rng, cases):
    worst = 0.0
    for _ in range(cases):
        x = _probe(rng, (2, 4, 3, 3))
        g = _probe(rng, (2, 2, 3, 3))
        ga = ops.spatial_stats_backward(Tensor(x), Tensor(g))
        num = numerical_grad(lambda v: float((ops.spatial_stats(Tensor(v)).data * g).sum()), x)
        worst = max(worst, max_rel_error(ga.data, num))
    return worst


@register("spp")
def _check_spp(rng, cases):
    worst = 0.0
    for _ in range(cases):
        windows = [3] if rng.integers(2) else [3, 5]
        x = _probe(rng, (1, 2, 6, 6))
        g = _probe(rng, (1, 2 * (1 + len(windows)), 6, 6))
        ga = ops.spp_backward(Tensor(x), windows, Tensor(g))
        num = numerical_grad(lambda v: float((ops.spp(Tensor(v), windows).data * g).sum()), x)
        worst = max(worst, max_rel_error(ga.data, num))
    return worst


# ---------------------------------------------------------------------------
# blocks
# ---------------------------------------------------------------------------

@register("pconv")
def _check_pconv(rng, cases):
    worst = 0.0
    for _ in range(cases):
        c = int(rng.integers(2, 7))
        cp = int(rng.integers(1, c + 1))
        spec = blocks.PConvSpec(c, cp, 3)
        x = _probe(rng, (2, c, 5, 5))
        w = _probe(rng, (cp, cp, 3, 3))
        g = _probe(rng, (2, c, 5, 5))
        gx, gw = blocks.pconv_backward(Tensor(x), Tensor(w), spec, Tensor(g))
        worst = max(worst, max_rel_error(gx.data, numerical_grad(
            lambda v: float((blocks.pconv_forward(Tensor(v), Tensor(w), spec).data * g).sum()), x)))
        worst = max(worst, max_rel_error(gw.data, numerical_grad(
            lambda v: float((blocks.pconv_forward(Tensor(x), Tensor(v), spec).data * g).sum()), w)))
    return worst


@register("fasternet_block")
def _check_block(rng, cases):
    worst = 0.0
    for _ in range(cases):
        c = int(rng.integers(2, 5))
        spec = blocks.FasterNetBlockSpec(c, blocks.PConvSpec(c, max(1, c // 2), 3))
        params = blocks.FasterNetBlockParams.init(spec, rng)
        x = _probe(rng, (1, c, 4, 4))
        g = _probe(rng, (1, c, 4, 4))
        gx, gp = blocks.fasternet_block_backward(Tensor(x), params, spec, Tensor(g))

        def run(v):
            return float((blocks.fasternet_block_forward(Tensor(v), params, spec).data * g).sum())

        worst = max(worst, max_rel_error(gx.data, numerical_grad(run, x)))
        for attr in ("pconv_w", "pw1_w", "pw1_b", "pw2_w", "pw2_b"):
            base = getattr(params, attr)
            arr = base.data if isinstance(base, Tensor) else base

            def runp(v, attr=attr, arr=arr):
                patched = {a: getattr(params, a) for a in
                           ("pconv_w", "pw1_w", "pw1_b", "pw2_w", "pw2_b")}
                patched[attr] = Tensor(v) if isinstance(getattr(params, attr), Tensor) else v
                p2 = blocks.FasterNetBlockParams(**patched)
                return float((blocks.fasternet_block_forward(Tensor(x), p2, spec).data * g).sum())

            got = getattr(gp, attr)
            got = got.data if isinstance(got, Tensor) else got
            worst = max(worst, max_rel_error(got, numerical_grad(runp, arr.copy())))
    return worst


def _channel_attention_suite(mlp_mode):
    def suite(rng, cases):
        worst = 0.0
        for _ in range(cases):
            c = int(rng.integers(2, 7))
            spec = blocks.CBAMSpec(c, reduction=2, channel_mlp=mlp_mode)
            d1 = c if mlp_mode == "literal" else spec.hidden
            d2in = spec.hidden if mlp_mode == "prose" else c
            x = _probe(rng, (2, c, 3, 3))
            w1 = _probe(rng, (d1, c))
            b1 = _probe(rng, (d1,))
            w2 = _probe(rng, (c, d2in))
            b2 = _probe(rng, (c,))
            g = _probe(rng, (2, c, 3, 3))
            gx, gw1, gb1, gw2, gb2 = blocks.channel_attention_backward(
                Tensor(x), w1, b1, w2, b2, spec, Tensor(g))

            def probe_fc(xx, a1, c1, a2, c2):
                _, fc = blocks.channel_attention(Tensor(xx), a1, c1, a2, c2, spec)
                return float((fc.data * g).sum())

            worst = max(worst, max_rel_error(gx.data, numerical_grad(
                lambda v: probe_fc(v, w1, b1, w2, b2), x)))
            worst = max(worst, max_rel_error(gw1, numerical_grad(
                lambda v: probe_fc(x, v, b1, w2, b2), w1)))
            worst = max(worst, max_rel_error(gb1, numerical_grad(
                lambda v: probe_fc(x, w1, v, w2, b2), b1)))
            worst = max(worst, max_rel_error(gw2, numerical_grad(
                lambda v: probe_fc(x, w1, b1, v, b2), w2)))
            worst = max(worst, max_rel_error(gb2, numerical_grad(
                lambda v: probe_fc(x, w1, b1, w2, v), b2)))
        return worst
    return suite


register("channel_attention")(_channel_attention_suite("prose"))
register("channel_attention_literal")(_channel_attention_suite("literal"))


@register("spatial_attention")
def _check_spatial_attention(rng, cases):
    worst = 0.0
    for _ in range(cases):
        c = int(rng.integers(2, 6))
        k = 3 if rng.integers(2) else 1
        spec = blocks.CBAMSpec(c, spatial_kernel=k)
        x = _probe(rng, (2, c, 4, 4))
        w = _probe(rng, (1, 2, k, k))
        b = _probe(rng, (1,))
        g = _probe(rng, (2, c, 4, 4))
        gx, gw, gb = blocks.spatial_attention_backward(Tensor(x), Tensor(w), b, spec, Tensor(g))

        def probe_fs(xx, ww, bb):
            _, fs = blocks.spatial_attention(Tensor(xx), Tensor(ww), bb, spec)
            return float((fs.data * g).sum())

        worst = max(worst, max_rel_error(gx.data, numerical_grad(lambda v: probe_fs(v, w, b), x)))
        worst = max(worst, max_rel_error(gw.data, numerical_grad(lambda v: probe_fs(x, v, b), w)))
        worst = max(worst, max_rel_error(gb, numerical_grad(lambda v: probe_fs(x, w, v), b)))
    return worst


def _cbam_suite(composition):
    def suite(rng, cases):
        worst = 0.0
        for _ in range(cases):
            c = int(rng.integers(2, 6))
            spec = blocks.CBAMSpec(c, reduction=2, spatial_kernel=1, composition=composition)
            params = blocks.CBAMParams.init(spec, rng)
            params.b1 = _probe(rng, params.b1.shape)
            params.b2 = _probe(rng, params.b2.shape)
            params.spatial_b = _probe(rng, (1,))
            x = _probe(rng, (2, c, 3, 3))
            g = _probe(rng, (2, c, 3, 3))
            gx, gp = blocks.cbam_backward(Tensor(x), params, spec, Tensor(g))

            def run_with(xx, pp):
                return float((blocks.cbam_forward(Tensor(xx), pp, spec).data * g).sum())

            worst = max(worst, max_rel_error(gx.data, numerical_grad(
                lambda v: run_with(v, params), x)))
            for attr in ("w1", "b1", "w2", "b2", "spatial_w", "spatial_b"):
                base = getattr(params, attr)
                arr = base.data if isinstance(base, Tensor) else base

                def runp(v, attr=attr):
                    kwargs = {a: getattr(params, a) for a in
                              ("w1", "b1", "w2", "b2", "spatial_w", "spatial_b")}
                    kwargs[attr] = Tensor(v) if isinstance(getattr(params, attr), Tensor) else v
                    return run_with(x, blocks.CBAMParams(**kwargs))

                got = getattr(gp, attr)
                got = got.data if isinstance(got, Tensor) else got
                worst = max(worst, max_rel_error(got, numerical_grad(runp, arr.copy())))
        return worst
    return suite


register("cbam_sequential")(_cbam_suite("sequential"))
register("cbam_literal")(_cbam_suite("literal"))


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def _random_box_pair(rng):
    """Non-degenerate pred/gt with no coinciding edges (losses are only
    differentiable away from min/max switch points)."""
    while True:
        vals = rng.uniform(0.0, 10.0, size=8)
        px1, px2 = sorted(vals[0:2])
        py1, py2 = sorted(vals[2:4])
        gx1, gx2 = sorted(vals[4:6])
        gy1, gy2 = sorted(vals[6:8])
        coords = [px1, py1, px2, py2, gx1, gy1, gx2, gy2]
        if min(px2 - px1, py2 - py1, gx2 - gx1, gy2 - gy1) < 0.2:
            continue
        gaps = [abs(a - b) for a, b in ((px1, gx1), (px2, gx2), (py1, gy1), (py2, gy2))]
        if min(gaps) < 1e-3:
            continue
        return losses.BBox(px1, py1, px2, py2), losses.BBox(gx1, gy1, gx2, gy2)


@register("ciou_loss")
def _check_ciou(rng, cases):
    worst = 0.0
    for _ in range(cases):
        pred, gt = _random_box_pair(rng)
        grad = losses.ciou_loss_grad(pred, gt)
        num = numerical_grad(
            lambda v: losses.ciou_loss(losses.BBox(*v), gt), pred.as_array())
        worst = max(worst, max_rel_error(grad, num))
    return worst


@register("wiou_loss")
def _check_wiou(rng, cases):
    """The analytic gradient holds the enclosing-box normalizer fixed, so the
    oracle differentiates the loss with that normalizer frozen at its
    unperturbed value."""
    worst = 0.0
    for _ in range(cases):
        pred, gt = _random_box_pair(rng)
        p, g = pred.as_array(), gt.as_array()
        diag2, _ = losses._enclosing_with_grad(p, g)
        d0 = diag2 + losses.EPS

        def frozen(v):
            b = losses.BBox(*v)
            rho2, _ = losses._center_dist_sq_with_grad(v, g)
            return float(np.exp(rho2 / d0) * (1.0 - losses.iou(b, gt)))

        grad = losses.wiou_loss_grad(pred, gt)
        worst = max(worst, max_rel_error(grad, numerical_grad(frozen, p)))
    return worst


@register("detection_loss")
def _check_detection_loss(rng, cases):
    """Covers the iou and ciou variants, whose composite gradient is the true
    derivative. The wiou box core holds its enclosing-box normalizer fixed by
    design, so its detached gradient is checked by the wiou_loss suite."""
    worst = 0.0
    for case in range(cases):
        k = 2
        gh = gw = 3
        stride = 8.0
        head = _probe(rng, (1, 5 + k, gh, gw))
        w, h = rng.uniform(4.0, 10.0, size=2)
        cx = rng.uniform(w / 2 + 0.1, 24.0 - w / 2 - 0.1)
        cy = rng.uniform(h / 2 + 0.1, 24.0 - h / 2 - 0.1)
        targets = [(losses.BBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2),
                    int(rng.integers(k)))]
        variant = "iou" if case % 2 == 0 else "ciou"
        grad = losses.detection_loss_grad(Tensor(head), targets, variant, stride)
        num = numerical_grad(
            lambda v: losses.detection_loss(Tensor(v), targets, variant, stride).total, head)
        worst = max(worst, max_rel_error(grad.data, num))
    return worst
