"""Property suites behind `morphflow verify` and the acceptance tests.

Each suite returns CheckResult rows (name, measured error, tolerance,
pass). Oracles are kept independent of the code paths they check: finite
differences for gradients, brute-force scans for morphology, Monte Carlo
and closed forms for the diffusion math.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import diffusion, geometry, morphpde
from .autodiff import Tape, Tensor
from .gmcunet import CDEBlock, GMCUnet, UNetConfig


@dataclass(frozen=True)
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.error <= self.tolerance)


def _rel_linf(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))), 1e-12)
    return float(np.max(np.abs(a - b))) / scale


# ---------------------------------------------------------------------------
# geometry


def _random_ball_points(rng, count, n, rmax=0.9):
    d = rng.standard_normal((count, n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * (rng.uniform(0.0, rmax, size=(count, 1)) ** (1.0 / n))


def suite_geometry(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
    rows = []

    # Isometry invariance of the ball distance, n in {2, 3}.
    worst = 0.0
    for n in (2, 3):
        x = _random_ball_points(rng, 1000, n)
        y = _random_ball_points(rng, 1000, n)
        base = geometry.hyperbolic_distance(x, y)
        mats = np.stack([geometry.random_orthogonal(n, rng) for _ in range(1000)])
        worst = max(worst, float(np.max(np.abs(
            geometry.hyperbolic_distance(
                np.einsum("bij,bj->bi", mats, x),
                np.einsum("bij,bj->bi", mats, y)) - base))))
        perm = np.stack([np.eye(n)[rng.permutation(n)] for _ in range(1000)])
        worst = max(worst, float(np.max(np.abs(
            geometry.hyperbolic_distance(
                np.einsum("bij,bj->bi", perm, x),
                np.einsum("bij,bj->bi", perm, y)) - base))))
        flip = np.eye(n)
        flip[0, 0] = -1.0
        worst = max(worst, float(np.max(np.abs(
            geometry.hyperbolic_distance(x @ flip.T, y @ flip.T) - base))))
    rows.append(CheckResult("geometry.isometry_invariance", worst, 1e-12))

    # Metric axioms on random samples.
    x = _random_ball_points(rng, 500, 3)
    y = _random_ball_points(rng, 500, 3)
    z = _random_ball_points(rng, 500, 3)
    dxy = geometry.hyperbolic_distance(x, y)
    rows.append(CheckResult(
        "geometry.symmetry",
        float(np.max(np.abs(dxy - geometry.hyperbolic_distance(y, x)))), 0.0))
    rows.append(CheckResult(
        "geometry.identity_of_indiscernibles",
        float(np.max(geometry.hyperbolic_distance(x, x))), 0.0))
    tri = dxy - (geometry.hyperbolic_distance(x, z) + geometry.hyperbolic_distance(z, y))
    rows.append(CheckResult("geometry.triangle_inequality", float(np.max(tri)), 1e-12))

    # Group laws of the discrete grid actions, exact.
    f = rng.standard_normal((3, 8, 8))
    elems = [geometry.GridTransform.translation(2, 5),
             geometry.GridTransform.rot90(1),
             geometry.GridTransform.flip(0),
             geometry.GridTransform(np.array([[0, 1], [1, 0]]), np.array([1, 3]),
                                    channel_perm=(2, 0, 1))]
    err = 0.0
    for h in elems:
        for g in elems:
            lhs = geometry.left_regular_action(h, geometry.left_regular_action(g, f))
            rhs = geometry.left_regular_action(h.compose(g), f)
            err = max(err, float(np.max(np.abs(lhs - rhs))))
        back = geometry.left_regular_action(
            h.inverse(), geometry.left_regular_action(h, f))
        err = max(err, float(np.max(np.abs(back - f))))
    rows.append(CheckResult("geometry.left_regular_homomorphism", err, 0.0))

    # Embedding round trips and the Jacobian against finite differences.
    v = rng.standard_normal((1000, 3))
    v *= (10.0 * rng.uniform(0, 1, (1000, 1)) / np.linalg.norm(v, axis=1, keepdims=True))
    rows.append(CheckResult(
        "geometry.unembed_embed_roundtrip",
        float(np.max(np.abs(geometry.unembed(geometry.embed(v)) - v))), 1e-12))
    p = _random_ball_points(rng, 1000, 3, rmax=0.99)
    rows.append(CheckResult(
        "geometry.embed_unembed_roundtrip",
        float(np.max(np.abs(geometry.embed(geometry.unembed(p)) - p))), 1e-12))

    jerr = 0.0
    dets = []
    pts = rng.standard_normal((1000, 2)) * 2.0
    dets = np.abs(np.linalg.det(geometry.embed_jacobian(pts)))
    for x0 in pts[:50]:
        jac = geometry.embed_jacobian(x0)
        num = np.zeros_like(jac)
        h = 1e-6
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            num[:, j] = (geometry.embed(x0 + e) - geometry.embed(x0 - e)) / (2 * h)
        jerr = max(jerr, float(np.max(np.abs(jac - num)) / np.max(np.abs(num))))
    rows.append(CheckResult("geometry.embed_jacobian_fd", jerr, 1e-6))
    rows.append(CheckResult("geometry.embed_jacobian_nonsingular",
                            0.0 if float(np.min(dets)) > 0 else 1.0, 0.0))
    return rows


# ---------------------------------------------------------------------------
# morphology


def suite_morphology(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 22]))
    rows = []

    # Duality: dilation is the negated erosion of the negated field, bitwise.
    worst = 0.0
    for _ in range(100):
        side = int(rng.integers(4, 17))
        chans = int(rng.integers(1, 4))
        f = rng.standard_normal((chans, side, side))
        spec = morphpde.StructuringSpec(
            k=float(rng.uniform(1.3, 3.5)), t=float(rng.uniform(0.2, 4.0)),
            window_radius=int(rng.integers(1, min(4, side) + 1)),
            distance_mode=("euclidean", "hyperbolic_embedded")[int(rng.integers(0, 2))],
            metric_scale=float(rng.uniform(0.3, 2.0)))
        geom = morphpde.GridGeometry(side, side)
        a = morphpde.dilate(f, spec, geom)
        b = -morphpde.erode(-f, spec, geom)
        worst = max(worst, float(np.max(np.abs(a - b))))
        if not np.array_equal(a, b):
            worst = max(worst, 1.0)
    rows.append(CheckResult("morphology.duality_bitexact", worst, 0.0))

    # Adjunction and monotonicity of the flat operators on 8x8 grids.
    viol = 0.0
    for _ in range(100):
        f1 = rng.standard_normal((8, 8))
        f2 = rng.standard_normal((8, 8))
        r = int(rng.integers(1, 4))
        lhs = np.all(morphpde.flat_dilate(f1, r) <= f2)
        rhs = np.all(f1 <= morphpde.flat_erode(f2, r))
        if lhs != rhs:
            viol = 1.0
        lo = np.minimum(f1, f2)
        if not (np.all(morphpde.flat_erode(lo, r) <= morphpde.flat_erode(f1, r))
                and np.all(morphpde.flat_dilate(lo, r) <= morphpde.flat_dilate(f1, r))):
            viol = 1.0
        spec = morphpde.StructuringSpec(k=2.0, t=1.0, window_radius=r)
        geom = morphpde.GridGeometry(8, 8)
        if not (np.all(morphpde.erode(lo, spec, geom) <= morphpde.erode(f1, spec, geom))
                and np.all(morphpde.dilate(lo, spec, geom) <= morphpde.dilate(f1, spec, geom))):
            viol = 1.0
        if not (np.all(morphpde.flat_erode(f1, r) <= f1)
                and np.all(f1 <= morphpde.flat_dilate(f1, r))):
            viol = 1.0
    rows.append(CheckResult("morphology.adjunction_monotonicity", viol, 0.0))

    # Semigroup: two half-scale erosions match one full-scale erosion.
    side = 32
    yy, xx = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    err = 0.0
    for trial in range(3):
        freq = 2 * np.pi / side
        f = (np.sin(freq * (trial + 1) * yy) * np.cos(freq * (trial + 2) * xx)
             + 0.3 * np.sin(freq * 2 * (xx + yy)))
        geom = morphpde.GridGeometry(side, side, pixel_scale=0.2)
        half = morphpde.StructuringSpec(k=2.0, t=0.5, window_radius=side - 1)
        full = morphpde.StructuringSpec(k=2.0, t=1.0, window_radius=side - 1)
        twice = morphpde.erode(morphpde.erode(f, half, geom), half, geom)
        once = morphpde.erode(f, full, geom)
        err = max(err, _rel_linf(twice, once))
    rows.append(CheckResult("morphology.semigroup", err, 0.02))

    # Oracle triangle: Hopf-Lax vs exhaustive erosion, and vs the FD scheme.
    side = 64
    coords = (np.arange(side) + 0.5) / side
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    bump = np.exp(-(((yy - 0.5) ** 2 + (xx - 0.5) ** 2) / (2 * 0.15 ** 2)))
    problem = morphpde.MorphPDEProblem(initial=bump, k=2.0, lp_norm="l2",
                                       sign="erosion", horizon=0.25,
                                       grid_spacing=1.0 / side)
    hl = morphpde.hopf_lax_solve(problem)
    spec = morphpde.StructuringSpec(k=2.0, t=0.25, window_radius=side - 1)
    geom = morphpde.GridGeometry(side, side, pixel_scale=1.0 / side)
    ero = morphpde.erode(bump, spec, geom)
    rows.append(CheckResult("morphology.hopflax_vs_erode",
                            float(np.max(np.abs(hl - ero))), 1e-12))
    fd = morphpde.fd_hj_solve(problem, cfl=0.25)
    rows.append(CheckResult("morphology.hopflax_vs_fd",
                            float(np.max(np.abs(hl - fd))), 0.05))

    # FD scheme is monotone: ordered inputs stay ordered.
    f1 = bump
    f2 = bump - 0.2 - 0.1 * np.sin(6 * xx)
    p1 = morphpde.MorphPDEProblem(initial=f1, horizon=0.1, grid_spacing=1.0 / side)
    p2 = morphpde.MorphPDEProblem(initial=f2, horizon=0.1, grid_spacing=1.0 / side)
    gap = morphpde.fd_hj_solve(p1) - morphpde.fd_hj_solve(p2)
    rows.append(CheckResult("morphology.fd_monotone", float(max(-gap.min(), 0.0)), 0.0))

    # Small-time limit returns the initial condition.
    small = morphpde.MorphPDEProblem(initial=bump, horizon=1e-6, grid_spacing=1.0 / side)
    rows.append(CheckResult(
        "morphology.initial_condition",
        float(np.max(np.abs(morphpde.hopf_lax_solve(small) - bump))), 1e-3))
    return rows


# ---------------------------------------------------------------------------
# equivariance


def _random_group_elems(rng, side, chans):
    return [
        geometry.GridTransform.translation(int(rng.integers(0, side)),
                                           int(rng.integers(0, side))),
        geometry.GridTransform.rot90(int(rng.integers(1, 4))),
        geometry.GridTransform.flip(int(rng.integers(0, 2))),
        geometry.GridTransform(np.eye(2, dtype=np.int64), np.zeros(2, dtype=np.int64),
                               channel_perm=tuple(int(i) for i in rng.permutation(chans))),
    ]


def _apply_elem(h, f):
    return geometry.left_regular_action(h, f)


def permute_state_channels(state: dict, perm: np.ndarray) -> dict:
    """Conjugate a parameter dict by a channel permutation.

    Produces weights such that running the permuted weights on
    channel-permuted input yields the channel-permuted output. Covers the
    stages=0 GMCUnet and standalone CDE/attention blocks.
    """
    out = {}
    for name, arr in state.items():
        a = arr
        if name.startswith("time.fc"):
            out[name] = a.copy()
        elif name == "stem.w":
            out[name] = a[perm].copy()
        elif name == "stem.b":
            out[name] = a[perm].copy()
        elif name == "out.w":
            out[name] = a[:, perm].copy()
        elif name == "out.b":
            out[name] = a.copy()
        elif name.endswith((".gamma", ".beta")):
            out[name] = a[perm].copy()
        elif name.endswith((".win.w", ".wout.w", ".q.w", ".k.w", ".v.w", ".proj.w")):
            out[name] = a[perm][:, perm].copy()
        elif name.endswith((".win.b", ".wout.b", ".q.b", ".k.b", ".v.b", ".proj.b")):
            out[name] = a[perm].copy()
        elif name.endswith(".time.w"):
            out[name] = a[:, perm].copy()
        elif name.endswith(".time.b"):
            out[name] = a[perm].copy()
        elif name.endswith(".vel"):
            out[name] = a[perm].copy()
        elif "scale_raw" in name or ".lam_" in name:
            out[name] = a[perm].copy()
        else:
            raise KeyError(f"no channel-permutation rule for parameter {name!r}")
    return out


def _randomize_params(model_or_block, rng, scale=0.3):
    for name, p in dict(model_or_block.named_params()).items():
        p.data = (scale * rng.standard_normal(p.data.shape)).astype(np.float32)


def _op_equivariance(rng, op, chans, side, elems) -> float:
    worst = 0.0
    f = rng.standard_normal((chans, side, side))
    for h in elems:
        lhs = op(_apply_elem(h, f))
        rhs = _apply_elem(h, op(f))
        worst = max(worst, _rel_linf(lhs, rhs))
    return worst


def suite_equivariance(seed: int = 0, trials: int = 50) -> list[CheckResult]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 33]))
    rows = []
    side, chans = 8, 4
    geom = morphpde.GridGeometry(side, side)

    err_e = err_d = err_c = 0.0
    for _ in range(trials):
        spec = morphpde.StructuringSpec(
            k=float(rng.uniform(1.5, 3.0)), t=float(rng.uniform(0.3, 2.0)),
            window_radius=int(rng.integers(1, 4)),
            distance_mode=("euclidean", "hyperbolic_embedded")[int(rng.integers(0, 2))])
        elems = _random_group_elems(rng, side, chans)
        err_e = max(err_e, _op_equivariance(
            rng, lambda g: morphpde.erode(g, spec, geom), chans, side, elems))
        err_d = max(err_d, _op_equivariance(
            rng, lambda g: morphpde.dilate(g, spec, geom), chans, side, elems))
        # Convection commutes with integer translations (the velocity field
        # is a fixed vector, so rotations are out of scope here).
        shift = geometry.GridTransform.translation(int(rng.integers(0, side)),
                                                   int(rng.integers(0, side)))
        conv = morphpde.ConvectionSpec(
            velocity=rng.uniform(-1.5, 1.5, size=(chans, 2)), time=float(rng.uniform(0, 2)))
        err_c = max(err_c, _op_equivariance(
            rng, lambda g: morphpde.convect(g, conv), chans, side, [shift]))
    rows.append(CheckResult("equivariance.erode", err_e, 1e-5))
    rows.append(CheckResult("equivariance.dilate", err_d, 1e-5))
    rows.append(CheckResult("equivariance.convect_integer_shift", err_c, 1e-5))

    # Full CDE block: translations with live velocities; rotations/flips and
    # channel permutations with zero velocities (isotropic settings).
    cfg = UNetConfig(image_channels=1, image_side=side, base_channels=chans,
                     channel_mults=(), middle_blocks=2, attention=True,
                     attn_heads=1, block_type="cde", stem_kernel=1, time_dim=8)
    err_blk = 0.0
    for trial in range(trials):
        block = CDEBlock(np.random.default_rng(np.random.SeedSequence([seed, 44, trial])),
                         chans, 8, cfg, "blk")
        _randomize_params(block, rng)
        emb = Tensor(rng.standard_normal((1, 8)).astype(np.float32))
        x = rng.standard_normal((1, chans, side, side)).astype(np.float32)

        def run_block(b, arr):
            return b(Tensor(arr.astype(np.float32)), emb).data

        h = geometry.GridTransform.translation(int(rng.integers(0, side)),
                                               int(rng.integers(0, side)))
        lhs = run_block(block, _apply_elem(h, x[0])[None])
        rhs = _apply_elem(h, run_block(block, x)[0])[None]
        err_blk = max(err_blk, _rel_linf(lhs, rhs))

        block.vel.data = np.zeros_like(block.vel.data)
        for h in (geometry.GridTransform.rot90(int(rng.integers(1, 4))),
                  geometry.GridTransform.flip(int(rng.integers(0, 2)))):
            lhs = run_block(block, _apply_elem(h, x[0])[None])
            rhs = _apply_elem(h, run_block(block, x)[0])[None]
            err_blk = max(err_blk, _rel_linf(lhs, rhs))

        perm = rng.permutation(chans)
        state = {k: p.data for k, p in dict(block.named_params()).items()}
        pstate = permute_state_channels(state, perm)
        pblock = CDEBlock(np.random.default_rng(0), chans, 8, cfg, "blk")
        for k, p in dict(pblock.named_params()).items():
            p.data = pstate[k]
        lhs = run_block(pblock, x[:, perm])
        rhs = run_block(block, x)[:, perm]
        err_blk = max(err_blk, _rel_linf(lhs, rhs))
    rows.append(CheckResult("equivariance.cde_block", err_blk, 1e-5))

    # Whole network at stages=0 (no resampling layers).
    err_net = 0.0
    err_perm = 0.0
    for trial in range(trials):
        model = GMCUnet(cfg, np.random.default_rng(np.random.SeedSequence([seed, 55, trial])))
        _randomize_params(model, rng)
        t = np.array([int(rng.integers(1, 100))])
        x = rng.standard_normal((1, 1, side, side)).astype(np.float32)

        def run(m, arr):
            return m(Tensor(arr.astype(np.float32)), t).data

        h = geometry.GridTransform.translation(int(rng.integers(0, side)),
                                               int(rng.integers(0, side)))
        err_net = max(err_net, _rel_linf(run(model, _apply_elem(h, x[0])[None]),
                                         _apply_elem(h, run(model, x)[0])[None]))
        for m in model.mids:
            m.vel.data = np.zeros_like(m.vel.data)
        for h in (geometry.GridTransform.rot90(int(rng.integers(1, 4))),
                  geometry.GridTransform.flip(int(rng.integers(0, 2)))):
            err_net = max(err_net, _rel_linf(run(model, _apply_elem(h, x[0])[None]),
                                             _apply_elem(h, run(model, x)[0])[None]))

        # Channel permutation of the internal width, conjugating the weights.
        perm = rng.permutation(chans)
        pmodel = GMCUnet(cfg, np.random.default_rng(0))
        pmodel.load_state(permute_state_channels(model.state(), perm))
        err_perm = max(err_perm, _rel_linf(run(pmodel, x), run(model, x)))
    rows.append(CheckResult("equivariance.unet_stages0", err_net, 1e-5))
    rows.append(CheckResult("equivariance.unet_channel_perm", err_perm, 1e-5))
    return rows


# ---------------------------------------------------------------------------
# gradients


def _fd_grad(value_fn, arr: np.ndarray, h: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(arr)
    flat = arr.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = value_fn()
        flat[i] = old - h
        fm = value_fn()
        flat[i] = old
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def grad_check(make_loss, tensors: list, h: float = 1e-6) -> float:
    """Max relative gap between tape gradients and central differences."""
    for p in tensors:
        p.grad = None
        p.requires_grad = True
    with Tape() as tape:
        loss = make_loss()
    tape.backward(loss)
    analytic = [p.grad if p.grad is not None else np.zeros_like(p.data)
                for p in tensors]
    worst = 0.0
    for p, ana in zip(tensors, analytic):
        num = _fd_grad(lambda: float(make_loss().data), p.data, h)
        scale = max(float(np.max(np.abs(num))), float(np.max(np.abs(ana))), 1e-6)
        worst = max(worst, float(np.max(np.abs(ana - num))) / scale)
    return worst


def _weighted(fn, rng):
    """Fix a random linear functional of fn's output; the returned closure
    is a pure function of the tensors fn reads (required for FD probing)."""
    cache = {}

    def make_loss():
        out = fn()
        if "w" not in cache:
            cache["w"] = Tensor(rng.standard_normal(out.shape))
        return ad.sum_(ad.mul(out, cache["w"]))

    return make_loss


def _block_to_float64(block):
    for _, p in dict(block.named_params()).items():
        p.data = p.data.astype(np.float64)
    if hasattr(block, "_base"):
        block._base = Tensor(block._base.data.astype(np.float64))


def suite_gradients(seed: int = 0, block_trials: int = 20) -> list[CheckResult]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 66]))
    rows = []

    def t(shape, scale=1.0):
        return Tensor(scale * rng.standard_normal(shape))

    elementwise = {
        "add": lambda a, b: ad.add(a, b),
        "sub": lambda a, b: ad.sub(a, b),
        "mul": lambda a, b: ad.mul(a, b),
        "div": lambda a, b: ad.div(a, ad.add(ad.mul(b, b), 1.0)),
        "silu": lambda a, b: ad.silu(a),
        "sigmoid": lambda a, b: ad.sigmoid(a),
        "softplus": lambda a, b: ad.softplus(a),
        "exp": lambda a, b: ad.exp(a),
        "sqrt": lambda a, b: ad.sqrt(ad.add(ad.mul(a, a), 0.5)),
        "pow": lambda a, b: ad.pow_const(ad.add(ad.mul(a, a), 0.5), 1.7),
    }
    worst = 0.0
    for _ in range(3):
        a = t((4, 5))
        b = t((4, 5))
        for fn in elementwise.values():
            worst = max(worst, grad_check(_weighted(lambda fn=fn: fn(a, b), rng), [a, b]))
    rows.append(CheckResult("gradients.elementwise", worst, 1e-4))

    worst = 0.0
    for _ in range(3):
        a = t((3, 7))
        b = t((7, 4))
        worst = max(worst, grad_check(_weighted(lambda: ad.matmul(a, b), rng), [a, b]))
        c = t((2, 2, 5, 3))
        d = t((2, 2, 3, 4))
        worst = max(worst, grad_check(_weighted(lambda: ad.matmul(c, d), rng), [c, d]))
        e = t((2, 3, 6))
        worst = max(worst, grad_check(
            _weighted(lambda: ad.softmax(e, axis=-1), rng), [e]))
        worst = max(worst, grad_check(
            _weighted(lambda: ad.mean(ad.mul(e, e), axis=(1, 2)), rng), [e]))
        f = t((2, 3, 4, 4))
        worst = max(worst, grad_check(
            _weighted(lambda: ad.concat([f, ad.mul(f, f)], axis=1), rng), [f]))
        worst = max(worst, grad_check(
            _weighted(lambda: ad.upsample_nearest2x(f), rng), [f]))
    rows.append(CheckResult("gradients.linear_and_shape", worst, 1e-4))

    worst = 0.0
    for stride, padding in ((1, "periodic"), (1, "zero"), (2, "periodic"), (2, "zero")):
        x = t((2, 3, 8, 8))
        w = t((4, 3, 3, 3), scale=0.5)
        worst = max(worst, grad_check(
            _weighted(lambda stride=stride, padding=padding:
                      ad.conv2d(x, w, stride=stride, padding=padding), rng),
            [x, w]))
    x = t((2, 4, 6, 6))
    gamma = Tensor(1.0 + 0.1 * rng.standard_normal(4))
    beta = t((4,))
    worst = max(worst, grad_check(
        _weighted(lambda: ad.group_norm(x, gamma, beta, num_groups=2), rng),
        [x, gamma, beta]))
    rows.append(CheckResult("gradients.conv_and_norm", worst, 1e-4))

    worst = 0.0
    for _ in range(5):
        x = t((2, 3, 6, 6))
        pen = Tensor(np.abs(rng.standard_normal((3, 5, 5))) + 0.05)
        worst = max(worst, grad_check(
            _weighted(lambda: ad.window_min(x, pen), rng), [x, pen]))
        worst = max(worst, grad_check(
            _weighted(lambda: ad.window_max(x, ad.neg(pen)), rng), [x, pen]))
        vel = Tensor(rng.uniform(-1.2, 1.2, size=(3, 2)))
        worst = max(worst, grad_check(
            _weighted(lambda: ad.convect(x, vel), rng), [x, vel]))
    rows.append(CheckResult("gradients.morphology_ops", worst, 1e-4))

    worst = 0.0
    for trial in range(block_trials):
        chans = int(rng.integers(2, 5))
        side = int(rng.integers(4, 7))
        cfg = UNetConfig(image_channels=1, image_side=side, base_channels=chans,
                         channel_mults=(), middle_blocks=1, attention=False,
                         block_type="cde", stem_kernel=1, time_dim=8,
                         k=float(rng.uniform(1.5, 3.0)),
                         window_radius=int(rng.integers(1, 3)),
                         distance_mode=("euclidean", "hyperbolic_embedded")[trial % 2])
        block = CDEBlock(np.random.default_rng(np.random.SeedSequence([seed, 77, trial])),
                         chans, 8, cfg, "blk")
        _block_to_float64(block)
        params = dict(block.named_params())
        for p in params.values():
            p.data = 0.4 * rng.standard_normal(p.data.shape)
        x = Tensor(rng.standard_normal((1, chans, side, side)))
        emb = Tensor(rng.standard_normal((1, 8)))
        worst = max(worst, grad_check(
            _weighted(lambda: block(x, emb), rng), list(params.values()) + [x]))
    rows.append(CheckResult("gradients.cde_block_end_to_end", worst, 1e-3))

    # Attention block end to end.
    from .gmcunet import AttentionBlock
    worst = 0.0
    for trial in range(3):
        attn = AttentionBlock(np.random.default_rng(np.random.SeedSequence([seed, 88, trial])),
                              4, 2, 1, "attn")
        _block_to_float64(attn)
        params = dict(attn.named_params())
        for p in params.values():
            p.data = 0.4 * rng.standard_normal(p.data.shape)
        x = Tensor(rng.standard_normal((2, 4, 3, 3)))
        worst = max(worst, grad_check(
            _weighted(lambda: attn(x), rng), list(params.values()) + [x]))
    rows.append(CheckResult("gradients.attention_end_to_end", worst, 1e-3))

    # Backward linearity: grad(a f + b g) = a grad f + b grad g.
    x = t((3, 3))
    y = t((3, 3))
    x.requires_grad = True

    def run(wa, wb):
        x.grad = None
        with Tape() as tape:
            loss = ad.add(ad.mul(ad.sum_(ad.mul(x, x)), wa),
                          ad.mul(ad.sum_(ad.mul(x, y)), wb))
        tape.backward(loss)
        return x.grad.copy()

    lin = run(2.0, 3.0) - (2.0 * run(1.0, 0.0) + 3.0 * run(0.0, 1.0))
    rows.append(CheckResult("gradients.backward_linearity",
                            float(np.max(np.abs(lin))), 1e-10))
    return rows


# ---------------------------------------------------------------------------
# diffusion


def suite_diffusion(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 99]))
    rows = []

    sched = diffusion.make_schedule(1000, 1e-4, 0.02)
    inv = max(float(np.max(np.abs(sched.alpha - (1.0 - sched.beta)))),
              float(np.max(np.abs(sched.alpha_bar - np.cumprod(sched.alpha)))),
              float(np.max(np.abs(sched.sigma2 - sched.beta))))
    if not np.all(np.diff(sched.alpha_bar) < 0):
        inv = max(inv, 1.0)
    rows.append(CheckResult("diffusion.schedule_invariants", inv, 0.0))
    rows.append(CheckResult("diffusion.terminal_noising",
                            float(sched.alpha_bar[-1]), 1e-4))

    # Composing two single-step kernels matches the closed-form marginal.
    sched10 = diffusion.make_schedule(10, 0.05, 0.3)
    n0 = np.full(10_000, 1.5)
    one = diffusion.single_step_sample(n0, 1, rng.standard_normal(10_000), sched10)
    two = diffusion.single_step_sample(one, 2, rng.standard_normal(10_000), sched10)
    mean_true = np.sqrt(sched10.alpha_bar[1]) * 1.5
    std_true = np.sqrt(1.0 - sched10.alpha_bar[1])
    se_mean = std_true / np.sqrt(10_000)
    se_std = std_true / np.sqrt(2 * 10_000)
    err = max(abs(two.mean() - mean_true) / (4 * se_mean),
              abs(two.std(ddof=1) - std_true) / (4 * se_std))
    rows.append(CheckResult("diffusion.forward_marginal_mc", float(err), 1.0))

    # Exact reconstruction at t = 1 with the true noise.
    n0 = rng.standard_normal((4, 1, 5, 5))
    eps = rng.standard_normal(n0.shape)
    n1 = diffusion.forward_sample(n0, 1, eps, sched10)
    back = diffusion.reverse_step(n1, eps, 1, sched10, None)
    rows.append(CheckResult("diffusion.t1_reconstruction",
                            float(np.max(np.abs(back - n0))), 1e-6))

    # KL of equal-variance Gaussians: zero iff the means agree.
    mu = rng.standard_normal((3, 2, 2))
    kl0 = diffusion.gaussian_kl(mu, mu.copy(), 0.5)
    kl1 = diffusion.gaussian_kl(np.ones((1, 1)), np.zeros((1, 1)), 0.5)
    err = max(abs(kl0), abs(kl1 - 1.0))
    rows.append(CheckResult("diffusion.kl_terms", float(err), 1e-12))

    # Reverse chain with the closed-form optimal predictor for Gaussian data.
    s = 0.7
    sched200 = diffusion.make_schedule(200, 1e-4, 0.02)
    x = rng.standard_normal(10_000)
    for tt in range(200, 0, -1):
        ab = sched200.alpha_bar[tt - 1]
        eps_hat = np.sqrt(1.0 - ab) * x / (ab * s * s + 1.0 - ab)
        noise = rng.standard_normal(10_000) if tt > 1 else None
        x = diffusion.reverse_step(x, eps_hat, tt, sched200, noise)
    rows.append(CheckResult("diffusion.gaussian_sampler_variance",
                            float(abs(x.var(ddof=1) - s * s) / (s * s)), 0.05))
    rows.append(CheckResult("diffusion.gaussian_sampler_mean",
                            float(abs(x.mean())), 4 * s / np.sqrt(10_000) * 2))
    return rows


_SUITES = {
    "geometry": suite_geometry,
    "morphology": suite_morphology,
    "equivariance": suite_equivariance,
    "gradients": suite_gradients,
    "diffusion": suite_diffusion,
}


def run_suites(names, seed: int = 0) -> list[CheckResult]:
    if "all" in names:
        names = list(_SUITES)
    rows = []
    for n in names:
        if n not in _SUITES:
            raise ValueError(f"unknown suite {n!r}; choose from "
                             f"{', '.join(list(_SUITES) + ['all'])}")
        rows.extend(_SUITES[n](seed))
    return rows
