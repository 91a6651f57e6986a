"""Trainable multiwavelet-multigrid operator.

The network lifts the input field to ``c`` channels, applies ``L`` layers
of the form ``h <- gelu(cycle(h) + mix h + bias)`` followed by one final
cycle and a pointwise projection.  Each cycle is a learnable V-shaped
multigrid pass: per-level smoothing convolutions applied to the running
residual, fixed multiwavelet restriction of the residual, a recursive
coarse correction, and transposed-filter prolongation.  Everything inside
a cycle is linear, so the only nonlinearity is the GELU between layers.

Gradients are computed by hand-written reverse-mode differentiation: the
forward pass records the per-level intermediates on a tape and
:func:`backward` replays the recursion in reverse.  All arithmetic is
float64 numpy, which keeps runs bitwise reproducible for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np
from scipy.special import erf

from . import rng
from .basis import FilterBank, derive_filter_bank
from .grids import Field
from .transforms import dwt_axis, idwt_axis
from .validation import check_dyadic_length

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

DETAIL_BLOCKS = {1: ("g",), 2: ("gh", "hg", "gg")}


# ---------------------------------------------------------------------------
# primitives


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact error-function GELU, x * Phi(x)."""
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * np.exp(-0.5 * x * x) * _INV_SQRT_2PI


def conv3(x: np.ndarray, kern: np.ndarray) -> np.ndarray:
    """Channel-mixing 3-tap (1D) or 3x3 (2D) correlation with zero padding.

    ``x`` has shape (batch, c_in, n) or (batch, c_in, ny, nx); ``kern`` has
    shape (c_out, c_in, 3) or (c_out, c_in, 3, 3).
    """
    if kern.ndim == 3:
        out = np.einsum("oi,bin->bon", kern[:, :, 1], x)
        out[:, :, 1:] += np.einsum("oi,bin->bon", kern[:, :, 0], x[:, :, :-1])
        out[:, :, :-1] += np.einsum("oi,bin->bon", kern[:, :, 2], x[:, :, 1:])
        return out
    ny, nx = x.shape[-2:]
    out = np.zeros(x.shape[:1] + (kern.shape[0],) + x.shape[2:])
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            w = kern[:, :, di + 1, dj + 1]
            src_i = slice(max(di, 0), ny + min(di, 0))
            dst_i = slice(max(-di, 0), ny + min(-di, 0))
            src_j = slice(max(dj, 0), nx + min(dj, 0))
            dst_j = slice(max(-dj, 0), nx + min(-dj, 0))
            out[:, :, dst_i, dst_j] += np.einsum("oi,biyx->boyx", w, x[:, :, src_i, src_j])
    return out


def conv3_input_vjp(kern: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Gradient of ``conv3`` with respect to its input."""
    if kern.ndim == 3:
        flipped = kern.transpose(1, 0, 2)[:, :, ::-1]
    else:
        flipped = kern.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]
    return conv3(g, flipped)


def conv3_kernel_vjp(g: np.ndarray, x: np.ndarray, kern_shape: tuple[int, ...]) -> np.ndarray:
    """Gradient of ``conv3`` with respect to its kernel."""
    gk = np.zeros(kern_shape)
    if len(kern_shape) == 3:
        n = x.shape[-1]
        gk[:, :, 1] = np.einsum("bon,bin->oi", g, x)
        gk[:, :, 0] = np.einsum("bon,bin->oi", g[:, :, 1:], x[:, :, : n - 1])
        gk[:, :, 2] = np.einsum("bon,bin->oi", g[:, :, : n - 1], x[:, :, 1:])
        return gk
    ny, nx = x.shape[-2:]
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            src_i = slice(max(di, 0), ny + min(di, 0))
            dst_i = slice(max(-di, 0), ny + min(-di, 0))
            src_j = slice(max(dj, 0), nx + min(dj, 0))
            dst_j = slice(max(-dj, 0), nx + min(-dj, 0))
            gk[:, :, di + 1, dj + 1] = np.einsum(
                "boyx,biyx->oi", g[:, :, dst_i, dst_j], x[:, :, src_i, src_j]
            )
    return gk


def pointwise(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Apply a channel matrix at every grid point: (c_out, c_in) x (b, c_in, ...)."""
    return np.einsum("oc,bc...->bo...", w, x)


def _channel_outer(g: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Sum g[b,o,...] x[b,c,...] over batch and space: gradient of pointwise maps."""
    spec = "bon,bcn->oc" if g.ndim == 3 else "boyx,bcyx->oc"
    return np.einsum(spec, g, x)


def _wsplit(x: np.ndarray, bank: FilterBank, dim: int):
    """One analysis step on the trailing spatial axes; leading axes ride along."""
    if dim == 1:
        a, d = dwt_axis(x, bank, axis=-1)
        return a, (d,)
    ax, dx = dwt_axis(x, bank, axis=-1)
    a, gh = dwt_axis(ax, bank, axis=-2)
    hg, gg = dwt_axis(dx, bank, axis=-2)
    return a, (gh, hg, gg)


def _wmerge(a: np.ndarray, details, bank: FilterBank, dim: int) -> np.ndarray:
    if dim == 1:
        return idwt_axis(a, details[0], bank, axis=-1)
    gh, hg, gg = details
    ax = idwt_axis(a, gh, bank, axis=-2)
    dx = idwt_axis(hg, gg, bank, axis=-2)
    return idwt_axis(ax, dx, bank, axis=-1)


# ---------------------------------------------------------------------------
# parameters


@dataclass
class CycleParams:
    """Weights of one learnable multigrid cycle.

    ``a_kernels[j]`` and ``s_kernels[j][i]`` are the operator and smoother
    convolutions of level ``j`` (level 0 finest); the number of smoothing
    steps per level is ``len(s_kernels[j])``.  ``detail_maps[j]`` holds the
    optional 1x1 channel maps applied to the detail blocks produced when
    restricting from level ``j``; ``d_inv`` acts on the coarsest right-hand
    side.  Detail machinery is absent (None) unless enabled.
    """

    a_kernels: list[np.ndarray]
    s_kernels: list[list[np.ndarray]]
    detail_maps: list[tuple[np.ndarray, ...]] | None = None
    d_inv: np.ndarray | None = None

    @property
    def depth(self) -> int:
        return len(self.a_kernels)

    @property
    def dim(self) -> int:
        return self.a_kernels[0].ndim - 2

    @property
    def steps(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.s_kernels)


@dataclass
class LayerParams:
    cycle: CycleParams
    mix: np.ndarray
    bias: np.ndarray


@dataclass
class ModelParams:
    """All learnable tensors plus the fixed filter bank and layout metadata."""

    k: int
    c: int
    depth: int
    layers_count: int
    dim: int
    steps: tuple[int, ...]
    in_channels: int
    out_channels: int
    use_detail_maps: bool
    bank: FilterBank
    lift: np.ndarray = dataclass_field(repr=False, default=None)
    project: np.ndarray = dataclass_field(repr=False, default=None)
    layers: list[LayerParams] = dataclass_field(repr=False, default=None)
    final_cycle: CycleParams = dataclass_field(repr=False, default=None)

    @property
    def L(self) -> int:
        return self.layers_count


def _cycle_tensor_names(prefix: str, cycle: CycleParams):
    for j, kern in enumerate(cycle.a_kernels):
        yield f"{prefix}.a.{j}", kern
    for j, kerns in enumerate(cycle.s_kernels):
        for i, kern in enumerate(kerns):
            yield f"{prefix}.s.{j}.{i}", kern
    if cycle.detail_maps is not None:
        blocks = DETAIL_BLOCKS[cycle.dim]
        for j, maps in enumerate(cycle.detail_maps):
            for name, mat in zip(blocks, maps):
                yield f"{prefix}.det.{j}.{name}", mat
    if cycle.d_inv is not None:
        yield f"{prefix}.dinv", cycle.d_inv


def named_tensors(params: ModelParams):
    """Yield (name, array) for every learnable tensor in a fixed order."""
    yield "lift", params.lift
    for l, layer in enumerate(params.layers):
        yield from _cycle_tensor_names(f"layers.{l}.cycle", layer.cycle)
        yield f"layers.{l}.mix", layer.mix
        yield f"layers.{l}.bias", layer.bias
    yield from _cycle_tensor_names("final", params.final_cycle)
    yield "project", params.project


def _init_cycle(gen: np.random.Generator, k: int, c: int, depth: int, steps, dim: int, use_detail_maps: bool) -> CycleParams:
    taps = (3,) * dim
    fan_in = c * 3**dim

    def draw(shape, fan):
        s = 1.0 / np.sqrt(fan)
        return gen.uniform(-s, s, size=shape)

    a_kernels = [draw((c, c) + taps, fan_in) for _ in range(depth)]
    s_kernels = [[draw((c, c) + taps, fan_in) for _ in range(steps[j])] for j in range(depth)]
    detail_maps = None
    d_inv = None
    if use_detail_maps:
        blocks = DETAIL_BLOCKS[dim]
        detail_maps = [
            tuple(draw((c, c), c) for _ in blocks) for _ in range(depth - 1)
        ]
        d_inv = draw((c, c), c)
    return CycleParams(a_kernels, s_kernels, detail_maps, d_inv)


def init_params(
    k: int = 4,
    c: int = 4,
    depth: int = 3,
    layers: int = 4,
    dim: int = 1,
    steps=None,
    in_channels: int = 1,
    out_channels: int = 1,
    use_detail_maps: bool = False,
    seed: int = 0,
) -> ModelParams:
    """Create a seeded model; weights are uniform in +-1/sqrt(fan_in).

    ``depth`` counts grid levels inside each cycle (so depth 1 never
    changes resolution) and ``steps`` gives the per-level smoothing counts,
    defaulting to the increasing schedule (1, 2, ..., depth): coarse levels
    are cheap, and the extra coarse smoothers measurably improve training.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if layers < 0:
        raise ValueError("layer count must be >= 0")
    if dim not in (1, 2):
        raise ValueError("dim must be 1 or 2")
    steps = tuple(int(s) for s in (steps if steps is not None else range(1, depth + 1)))
    if len(steps) != depth or any(s < 1 for s in steps):
        raise ValueError(f"steps must hold {depth} positive counts, got {steps}")
    bank = derive_filter_bank(k)
    gen = rng.stream(seed, rng.PURPOSE_MODEL_INIT)

    lift = gen.uniform(-1, 1, size=(c, in_channels)) / np.sqrt(in_channels)
    layer_list = []
    for _ in range(layers):
        cycle = _init_cycle(gen, k, c, depth, steps, dim, use_detail_maps)
        mix = gen.uniform(-1, 1, size=(c, c)) / np.sqrt(c)
        bias = gen.uniform(-1, 1, size=(c,)) / np.sqrt(c)
        layer_list.append(LayerParams(cycle, mix, bias))
    final_cycle = _init_cycle(gen, k, c, depth, steps, dim, use_detail_maps)
    project = gen.uniform(-1, 1, size=(out_channels, c)) / np.sqrt(c)

    return ModelParams(
        k=k,
        c=c,
        depth=depth,
        layers_count=layers,
        dim=dim,
        steps=steps,
        in_channels=in_channels,
        out_channels=out_channels,
        use_detail_maps=use_detail_maps,
        bank=bank,
        lift=lift,
        project=project,
        layers=layer_list,
        final_cycle=final_cycle,
    )


def zero_like_params(params: ModelParams) -> ModelParams:
    """Copy of the model with every learnable tensor set to zero."""
    import copy

    out = copy.deepcopy(params)
    for _, arr in named_tensors(out):
        arr[...] = 0.0
    return out


# ---------------------------------------------------------------------------
# forward


def _cycle_fwd(cycle: CycleParams, f: np.ndarray, bank: FilterBank, level: int, record: bool):
    dim = cycle.dim
    cache = {"f": f, "smooth": []} if record else None
    u = np.zeros_like(f)
    a_kern = cycle.a_kernels[level]
    for i, s_kern in enumerate(cycle.s_kernels[level]):
        r = f if i == 0 else f - conv3(u, a_kern)
        if record:
            cache["smooth"].append((u, r))
        u = u + conv3(r, s_kern)
    if level < cycle.depth - 1:
        r_last = f - conv3(u, a_kern)
        approx, details = _wsplit(r_last, bank, dim)
        if cycle.detail_maps is not None:
            mapped = tuple(
                pointwise(m, d) for m, d in zip(cycle.detail_maps[level], details)
            )
        else:
            mapped = tuple(np.zeros_like(d) for d in details)
        u_coarse, sub = _cycle_fwd(cycle, approx, bank, level + 1, record)
        if record:
            cache["u_s"] = u
            cache["details"] = details
            cache["sub"] = sub
        u = u + _wmerge(u_coarse, mapped, bank, dim)
    elif cycle.d_inv is not None:
        u = u + pointwise(cycle.d_inv, f)
    return u, cache


def learnable_mg_cycle(cycle: CycleParams, h: np.ndarray, bank: FilterBank) -> np.ndarray:
    """Run one learnable multigrid cycle on a (batch, c, ...) array.

    The input plays the role of the right-hand side; the running solution
    starts at zero, so with a single level and one smoothing step the
    output is just the smoother applied to ``h``.  The map is linear in
    ``h``.
    """
    out, _ = _cycle_fwd(cycle, np.asarray(h, dtype=float), bank, 0, record=False)
    return out


def _check_input_shape(params: ModelParams, spatial: tuple[int, ...]) -> None:
    if len(spatial) != params.dim:
        raise ValueError(f"expected a {params.dim}D field, got shape {spatial}")
    for n in spatial:
        m = check_dyadic_length(n, params.k, min_levels=1, name="axis length")
        if m < params.depth:
            raise ValueError(
                f"axis length {n} = k*2^{m} does not support depth {params.depth} "
                f"(need k*2^n with n >= depth)"
            )


def _forward_batch(params: ModelParams, x: np.ndarray, record: bool):
    """x: (batch, in_channels, *spatial) -> (out, caches)."""
    caches = [] if record else None
    h = pointwise(params.lift, x)
    for layer in params.layers:
        cyc, ccache = _cycle_fwd(layer.cycle, h, params.bank, 0, record)
        z = cyc + pointwise(layer.mix, h) + layer.bias.reshape((1, -1) + (1,) * params.dim)
        if record:
            caches.append({"h_prev": h, "z": z, "cycle": ccache})
        h = gelu(z)
    y, fcache = _cycle_fwd(params.final_cycle, h, params.bank, 0, record)
    out = pointwise(params.project, y)
    if record:
        caches.append({"h_prev": h, "y": y, "cycle": fcache, "x": x})
    return out, caches


def _as_batch(params: ModelParams, a) -> np.ndarray:
    arr = a.data if isinstance(a, Field) else np.asarray(a, dtype=float)
    if arr.ndim == params.dim:
        if params.in_channels != 1:
            raise ValueError(f"model expects {params.in_channels} input channels")
        arr = arr[None]
    elif arr.ndim == params.dim + 1:
        if arr.shape[0] != params.in_channels:
            raise ValueError(
                f"leading axis {arr.shape[0]} does not match in_channels={params.in_channels}"
            )
    else:
        raise ValueError(f"cannot interpret input of shape {arr.shape}")
    _check_input_shape(params, arr.shape[1:])
    return arr[None]


def forward(params: ModelParams, a):
    """Evaluate the operator on a single field.

    Accepts a Field or array shaped like the spatial grid (single channel)
    or with a leading channel axis; returns the same structure with
    ``out_channels`` channels (squeezed when 1).
    """
    batch = _as_batch(params, a)
    out, _ = _forward_batch(params, batch, record=False)
    result = out[0, 0] if params.out_channels == 1 else out[0]
    if isinstance(a, Field):
        return Field(result, a.spacing, params.out_channels)
    return result


def evaluate_superres(params: ModelParams, a_fine, base_shape: tuple[int, ...] | None = None):
    """Evaluate at a finer resolution than the model was trained on.

    Every component is resolution-agnostic, so the same weights apply
    unchanged; when ``base_shape`` is given the fine grid must be a dyadic
    multiple of it per axis.
    """
    arr = a_fine.data if isinstance(a_fine, Field) else np.asarray(a_fine, dtype=float)
    spatial = arr.shape[-params.dim :]
    if base_shape is not None:
        for fine, base in zip(spatial, base_shape):
            ratio, rem = divmod(fine, base)
            if rem != 0 or ratio & (ratio - 1):
                raise ValueError(
                    f"fine axis {fine} is not a dyadic multiple of the base axis {base}"
                )
    return forward(params, a_fine)


# ---------------------------------------------------------------------------
# loss and reverse-mode gradients


@dataclass
class Tape:
    """Primal intermediates recorded by one loss evaluation."""

    params: ModelParams
    inputs: np.ndarray
    targets: np.ndarray
    preds: np.ndarray
    target_norms_sq: np.ndarray
    caches: list
    consumed: bool = False


def _stack_batch(params: ModelParams, batch) -> tuple[np.ndarray, np.ndarray]:
    inputs, targets = [], []
    for a, u in batch:
        inputs.append(_as_batch(params, a)[0])
        t = u.data if isinstance(u, Field) else np.asarray(u, dtype=float)
        if t.ndim == params.dim:
            t = t[None]
        targets.append(t)
    if not inputs:
        raise ValueError("batch must be non-empty")
    return np.stack(inputs), np.stack(targets)


def loss(params: ModelParams, batch) -> float:
    """Mean squared relative L2 error over a batch of (input, target) pairs."""
    value, _ = loss_with_tape(params, batch, record=False)
    return value


def loss_with_tape(params: ModelParams, batch, record: bool = True):
    """Evaluate the loss and (optionally) record a tape for backward()."""
    x, t = _stack_batch(params, batch)
    preds, caches = _forward_batch(params, x, record)
    diff = preds - t
    axes = tuple(range(1, t.ndim))
    norms_sq = np.sum(t * t, axis=axes)
    if np.any(norms_sq == 0.0):
        raise ValueError("batch contains a zero-norm target")
    per_sample = np.sum(diff * diff, axis=axes) / norms_sq
    value = float(np.mean(per_sample))
    tape = Tape(params, x, t, preds, norms_sq, caches) if record else None
    return value, tape


def _cycle_bwd(cycle: CycleParams, prefix: str, cache, g: np.ndarray, grads, bank: FilterBank, level: int) -> np.ndarray:
    dim = cycle.dim
    a_kern = cycle.a_kernels[level]
    a_name = f"{prefix}.a.{level}"
    g_f = np.zeros_like(cache["f"])
    if level < cycle.depth - 1:
        g_uc, g_mapped = _wsplit(g, bank, dim)
        if cycle.detail_maps is not None:
            g_details = []
            blocks = DETAIL_BLOCKS[dim]
            for name, m, d, gm in zip(
                blocks, cycle.detail_maps[level], cache["details"], g_mapped
            ):
                grads[f"{prefix}.det.{level}.{name}"] += _channel_outer(gm, d)
                g_details.append(pointwise(m.T, gm))
            g_details = tuple(g_details)
        else:
            g_details = tuple(np.zeros_like(d) for d in g_mapped)
        g_a = _cycle_bwd(cycle, prefix, cache["sub"], g_uc, grads, bank, level + 1)
        g_r_last = _wmerge(g_a, g_details, bank, dim)
        g_f += g_r_last
        u_s = cache["u_s"]
        grads[a_name] -= conv3_kernel_vjp(g_r_last, u_s, a_kern.shape)
        g = g - conv3_input_vjp(a_kern, g_r_last)
    elif cycle.d_inv is not None:
        grads[f"{prefix}.dinv"] += _channel_outer(g, cache["f"])
        g_f += pointwise(cycle.d_inv.T, g)
    for i in reversed(range(len(cycle.s_kernels[level]))):
        s_kern = cycle.s_kernels[level][i]
        u_prev, r = cache["smooth"][i]
        grads[f"{prefix}.s.{level}.{i}"] += conv3_kernel_vjp(g, r, s_kern.shape)
        g_r = conv3_input_vjp(s_kern, g)
        g_f += g_r
        if i > 0:
            grads[a_name] -= conv3_kernel_vjp(g_r, u_prev, a_kern.shape)
            g = g - conv3_input_vjp(a_kern, g_r)
    return g_f


def backward(tape: Tape) -> dict[str, np.ndarray]:
    """Gradients of the recorded loss with respect to every tensor.

    The tape is single-use; a second call raises.
    """
    if tape.consumed:
        raise ValueError("tape already consumed")
    tape.consumed = True
    params = tape.params
    grads = {name: np.zeros_like(arr) for name, arr in named_tensors(params)}

    batch_size = tape.preds.shape[0]
    norm = tape.target_norms_sq.reshape((-1,) + (1,) * (tape.preds.ndim - 1))
    g_pred = 2.0 * (tape.preds - tape.targets) / (batch_size * norm)

    final_cache = tape.caches[-1]
    grads["project"] += _channel_outer(g_pred, final_cache["y"])
    g_y = pointwise(params.project.T, g_pred)
    g_h = _cycle_bwd(params.final_cycle, "final", final_cache["cycle"], g_y, grads, params.bank, 0)

    for l in reversed(range(params.L)):
        layer = params.layers[l]
        cache = tape.caches[l]
        g_z = g_h * gelu_grad(cache["z"])
        grads[f"layers.{l}.bias"] += g_z.sum(axis=(0,) + tuple(range(2, g_z.ndim)))
        grads[f"layers.{l}.mix"] += _channel_outer(g_z, cache["h_prev"])
        g_prev = pointwise(layer.mix.T, g_z)
        g_prev += _cycle_bwd(layer.cycle, f"layers.{l}.cycle", cache["cycle"], g_z, grads, params.bank, 0)
        g_h = g_prev

    grads["lift"] += _channel_outer(g_h, final_cache["x"])
    return grads


# ---------------------------------------------------------------------------
# classical weights for the frozen-cycle equivalence


def coarsen_kernel(kernel: np.ndarray) -> np.ndarray:
    """Induced coarse stencil of a 3 (or 3x3) kernel under order-1 transfers.

    For the order-1 (Haar) filter pair the product ``R A R^T`` of a
    zero-extension stencil is again a zero-extension stencil; along each
    axis ``(a, b, c) -> (a/2, b + (a+c)/2, c/2)``.
    """

    def rule(row):
        a, b, c = row
        return np.array([0.5 * a, b + 0.5 * (a + c), 0.5 * c])

    kernel = np.asarray(kernel, dtype=float)
    if kernel.ndim == 1:
        return rule(kernel)
    rows = np.stack([rule(kernel[i]) for i in range(3)])
    return np.stack([rule(rows[:, j]) for j in range(3)], axis=1)


def classical_cycle_params(kernel: np.ndarray, depth: int, steps, omega: float = 2.0 / 3.0) -> CycleParams:
    """Single-channel cycle weights reproducing a classical V-cycle (k=1).

    ``kernel`` is the finest-level stencil; level ``j`` uses its j-fold
    Galerkin coarsening and a weighted-Jacobi smoother kernel
    ``omega / center``.
    """
    kernel = np.asarray(kernel, dtype=float)
    dim = kernel.ndim
    steps = tuple(int(s) for s in steps)
    if len(steps) != depth:
        raise ValueError(f"need {depth} per-level step counts, got {len(steps)}")
    a_kernels, s_kernels = [], []
    level_kernel = kernel
    for j in range(depth):
        a_kernels.append(level_kernel.reshape((1, 1) + level_kernel.shape))
        center = level_kernel[1] if dim == 1 else level_kernel[1, 1]
        s_kern = np.zeros((1, 1) + (3,) * dim)
        if dim == 1:
            s_kern[0, 0, 1] = omega / center
        else:
            s_kern[0, 0, 1, 1] = omega / center
        s_kernels.append([s_kern.copy() for _ in range(steps[j])])
        level_kernel = coarsen_kernel(level_kernel)
    return CycleParams(a_kernels, s_kernels)
