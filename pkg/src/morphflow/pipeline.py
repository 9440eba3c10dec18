"""Training, sampling, and PDE-lab drivers shared by the CLI and tests.

Determinism contract: every random draw comes from a generator keyed by
(config seed, purpose tag, step), so a run is a pure function of its
config and interrupting/resuming at a checkpoint reproduces the
uninterrupted trajectory bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data_io, diffusion, morphpde
from .autodiff import AdamState, Tape, adam_step, ema_update
from .config import (ConfigError, RunConfig, config_from_sections,
                     emit_config_text, parse_config_text, seeded_rng)
from .data_io import CHECKPOINT_VERSION, ImageDataset
from .gmcunet import GMCUnet, UNetConfig

# rng purpose tags
_INIT, _STEP, _GRID, _MMD, _CLI_SAMPLE = 1, 2, 3, 4, 5


def unet_config(cfg: RunConfig) -> UNetConfig:
    md = cfg.model
    return UNetConfig(
        image_channels=md.image_channels,
        image_side=cfg.dataset.image_side,
        base_channels=md.base_channels,
        channel_mults=tuple(md.channel_mults),
        middle_blocks=md.middle_blocks,
        attention=md.attention,
        attn_heads=md.attn_heads,
        block_type=md.block,
        k=md.k,
        window_radius=md.window_radius,
        distance_mode=md.distance_mode,
        metric_scale=md.metric_scale,
        norm_groups=md.norm_groups,
        stem_kernel=md.stem_kernel,
        time_dim=md.time_dim,
        padding=md.padding,
    )


def build_dataset(cfg: RunConfig) -> tuple[ImageDataset, ImageDataset]:
    """Produce (train, holdout) splits per the dataset section."""
    ds = cfg.dataset
    total = ds.count + ds.holdout_count
    if ds.source == "synthetic_shapes":
        full = data_io.make_synthetic_shapes(total, ds.image_side, cfg.seed)
    elif ds.source == "gaussian_toy":
        full = data_io.make_gaussian_toy(total, ds.image_side, cfg.seed)
    else:
        raw = data_io.load_idx_images(ds.path)
        if raw.shape[1] != ds.image_side or raw.shape[2] != ds.image_side:
            raise ConfigError(
                f"dataset.image_side: file {ds.path} holds {raw.shape[1]}x{raw.shape[2]} "
                f"images, config says {ds.image_side}")
        if raw.shape[0] < total:
            raise ConfigError(f"dataset.count: {ds.path} holds only {raw.shape[0]} images, "
                              f"need {total} (count + holdout_count)")
        full = ImageDataset(images=data_io.normalize_images(raw[:total]), source="idx_file")
    if ds.rotate:
        policy = data_io.RotationPolicy(range_deg=(ds.rotate_min_deg, ds.rotate_max_deg))
        full = data_io.rotate_dataset(full, policy, cfg.seed)
    train = ImageDataset(images=full.images[:ds.count], source=full.source)
    holdout = ImageDataset(images=full.images[ds.count:total], source=full.source)
    return train, holdout


def checkpoint_header(cfg: RunConfig, step: int) -> str:
    return (emit_config_text(cfg)
            + f"\n[checkpoint]\nformat_version = {CHECKPOINT_VERSION}\nstep = {step}\n")


def parse_checkpoint_header(header: str) -> tuple[RunConfig, int]:
    sections = parse_config_text(header)
    meta = sections.pop("checkpoint", None)
    if meta is None or "step" not in meta:
        raise ValueError("checkpoint header lacks the [checkpoint] section")
    cfg = config_from_sections(sections)
    return cfg, int(meta["step"])


def _checkpoint_arrays(model: GMCUnet, state: AdamState, ema: dict) -> dict:
    arrays = {}
    for k, p in model.params.items():
        arrays[f"param.{k}"] = p.data
    for k in model.params:
        arrays[f"adam_m.{k}"] = state.m[k]
        arrays[f"adam_v.{k}"] = state.v[k]
    for k, v in ema.items():
        arrays[f"ema.{k}"] = v
    return arrays


def save_run_checkpoint(path, cfg: RunConfig, step: int, model: GMCUnet,
                        state: AdamState, ema: dict):
    data_io.save_checkpoint(path, checkpoint_header(cfg, step),
                            _checkpoint_arrays(model, state, ema))


def _split_prefix(arrays: dict, prefix: str) -> dict:
    plen = len(prefix)
    return {k[plen:]: v for k, v in arrays.items() if k.startswith(prefix)}


def load_run_checkpoint(path):
    """Returns (cfg, step, params, adam_m, adam_v, ema) raw array dicts."""
    header, arrays = data_io.load_checkpoint(path)
    cfg, step = parse_checkpoint_header(header)
    return (cfg, step, _split_prefix(arrays, "param."),
            _split_prefix(arrays, "adam_m."), _split_prefix(arrays, "adam_v."),
            _split_prefix(arrays, "ema."))


def sample_with_state(model: GMCUnet, weights: dict, sched, count: int,
                      rng: np.random.Generator, trace_every: int = 0):
    """Run the reverse chain under temporarily swapped-in weights (EMA)."""
    current = model.state()
    model.load_state(weights)
    try:
        shape = (model.cfg.image_channels, model.cfg.image_side, model.cfg.image_side)
        return diffusion.sample(model, sched, count, shape, rng, trace_every)
    finally:
        model.load_state(current)


@dataclass
class TrainResult:
    out_dir: Path
    checkpoint: Path
    metrics: list
    mmd: list


def run_train(cfg: RunConfig, resume=None) -> TrainResult:
    """The full training loop: loss, Adam, EMA, periodic artifacts."""
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.echo").write_text(emit_config_text(cfg), encoding="utf-8")

    train, holdout = build_dataset(cfg)
    model = GMCUnet(unet_config(cfg), seeded_rng(cfg.seed, _INIT))
    sched = diffusion.make_schedule(cfg.diffusion.steps, cfg.diffusion.beta_start,
                                    cfg.diffusion.beta_end)
    state = AdamState.init(model.params)
    ema = model.state()
    step0 = 0
    if resume is not None:
        rcfg, rstep, params_arr, m_arr, v_arr, ema_arr = load_run_checkpoint(resume)
        if rcfg != cfg:
            raise ConfigError("checkpoint config does not match the run config")
        model.load_state(params_arr)
        missing = sorted(set(model.params) - set(m_arr))
        if missing:
            raise ValueError(f"checkpoint lacks Adam moments for {missing}")
        state = AdamState(m={k: m_arr[k].copy() for k in model.params},
                          v={k: v_arr[k].copy() for k in model.params}, step=rstep)
        ema = {k: ema_arr[k].copy() for k in model.params}
        step0 = rstep

    opt = cfg.optimizer
    n_train = len(train)
    if n_train == 0 and opt.iterations > step0:
        raise ConfigError("dataset.count: the training split is empty")
    mmd_at = set(cfg.output.mmd_iters)
    mmd_ref = holdout.images[:cfg.output.mmd_count] if mmd_at else None
    bandwidth = data_io.median_bandwidth(mmd_ref) if mmd_at else None
    metrics = []
    mmd_rows = []

    for step in range(step0 + 1, opt.iterations + 1):
        rng = seeded_rng(cfg.seed, _STEP, step)
        batch = train.images[rng.integers(0, n_train, size=opt.batch_size)]
        with Tape() as tape:
            loss = diffusion.simple_loss(model, batch, sched, rng)
        lv = float(loss.data)
        if not np.isfinite(lv):
            raise FloatingPointError(f"non-finite training loss at step {step}")
        tape.backward(loss)
        adam_step(model.params, state, opt.lr, opt.beta1, opt.beta2, opt.eps)
        model.zero_grads()
        if step % opt.ema_every == 0:
            ema_update(ema, model.params, opt.ema_decay)
        metrics.append((step, lv))

        if cfg.output.sample_every and step % cfg.output.sample_every == 0:
            imgs = sample_with_state(model, ema, sched, cfg.output.sample_count,
                                     seeded_rng(cfg.seed, _GRID, step))
            data_io.emit_grid(imgs, cfg.output.grid_cols, out / f"samples_{step:06d}.pgm")
        if step in mmd_at:
            gen = sample_with_state(model, ema, sched, cfg.output.mmd_count,
                                    seeded_rng(cfg.seed, _MMD, step))
            mmd_rows.append((step, data_io.mmd_metric(gen, mmd_ref, bandwidth)))
        if cfg.output.checkpoint_every and step % cfg.output.checkpoint_every == 0:
            save_run_checkpoint(out / f"checkpoint_{step:06d}.ckpt", cfg, step,
                                model, state, ema)

    final_step = max(opt.iterations, step0)
    ckpt = out / "checkpoint_final.ckpt"
    save_run_checkpoint(ckpt, cfg, final_step, model, state, ema)
    data_io.emit_csv(metrics, out / "metrics.csv", header=["iteration", "loss"])
    if mmd_rows:
        data_io.emit_csv(mmd_rows, out / "mmd.csv", header=["iteration", "mmd"])
    return TrainResult(out_dir=out, checkpoint=ckpt, metrics=metrics, mmd=mmd_rows)


def run_sample(checkpoint, count: int, out_dir, seed=None, steps_override=None,
               trace: bool = False, grid_cols: int = 0) -> Path:
    """Sample from a checkpoint's EMA weights and emit the grid."""
    cfg, _, _, _, _, ema = load_run_checkpoint(checkpoint)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = GMCUnet(unet_config(cfg), seeded_rng(cfg.seed, _INIT))
    if sorted(ema) != sorted(model.params):
        raise ValueError("checkpoint parameters do not match the model config")
    T = steps_override if steps_override else cfg.diffusion.steps
    sched = diffusion.make_schedule(T, cfg.diffusion.beta_start, cfg.diffusion.beta_end)
    rng = seeded_rng(cfg.seed if seed is None else seed, _CLI_SAMPLE)
    trace_every = max(T // 10, 1) if trace else 0
    result = sample_with_state(model, ema, sched, count, rng, trace_every)
    cols = grid_cols if grid_cols else max(int(np.ceil(np.sqrt(count))), 1)
    if trace:
        samples, traces = result
        for t, snap in traces:
            data_io.emit_grid(np.clip(snap, -1.0, 1.0), cols, out / f"trace_{t:06d}.pgm")
    else:
        samples = result
    data_io.emit_grid(np.clip(samples, -1.0, 1.0), cols, out / "samples.pgm")
    return out / "samples.pgm"


def _pde_initial(init: str, side: int) -> np.ndarray:
    coords = (np.arange(side) + 0.5) / side
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    if init == "bump":
        return np.exp(-(((yy - 0.5) ** 2 + (xx - 0.5) ** 2) / (2 * 0.15 ** 2)))
    if init == "edge":
        return (xx < 0.5).astype(np.float64)
    if init == "constant":
        return np.full((side, side), 0.5)
    field = data_io.read_pgm(init).astype(np.float64)
    return field


def run_pde_lab(init: str, k: float, p: str, t: float, method: str,
                side: int, out_dir, sign: str = "erosion") -> dict:
    """Run the HJ solvers on a canned or loaded field; emit grids and gaps."""
    f0 = _pde_initial(init, side)
    side_eff = f0.shape[0]
    problem = morphpde.MorphPDEProblem(initial=f0, k=k, lp_norm=p, sign=sign,
                                       horizon=t, grid_spacing=1.0 / side_eff)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def emit(name, field):
        lo, hi = float(field.min()), float(field.max())
        scale = (hi - lo) if hi > lo else 1.0
        data_io.emit_grid((2.0 * (field - lo) / scale - 1.0)[None], 1, out / name)

    emit("pde_input.pgm", f0)
    report = {"init": init, "k": k, "p": p, "t": t, "method": method}
    if method in ("hopflax", "both"):
        hl = morphpde.hopf_lax_solve(problem)
        emit("pde_hopflax.pgm", hl)
        report["hopflax"] = hl
    if method in ("fd", "both"):
        fd = morphpde.fd_hj_solve(problem)
        emit("pde_fd.pgm", fd)
        report["fd"] = fd
    if method == "both":
        gap = report["hopflax"] - report["fd"]
        report["linf_gap"] = float(np.max(np.abs(gap)))
        report["l1_gap"] = float(np.mean(np.abs(gap)))
        data_io.emit_csv([[report["linf_gap"], report["l1_gap"]]],
                         out / "pde_report.csv", header=["linf_gap", "l1_gap"])
    return report
