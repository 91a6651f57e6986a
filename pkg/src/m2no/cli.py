"""Command-line front end.

Subcommands: ``filters``, ``transform``, ``solve``, ``gmres``, ``dataset``,
``train``, ``eval``, ``spectrum``.  Outputs land in ``--output-dir`` (or the
``M2NO_OUTPUT_DIR`` environment variable, or the working directory) and are
written atomically; with a fixed ``--seed`` every run is byte-identical.
Exit codes: 0 success, 2 configuration problems, 3 numerical failures,
4 I/O failures.
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile

import numpy as np

from . import rng
from .basis import derive_filter_bank
from .errors import FieldFileError, NumericalError
from .grids import Field, grid_points, make_dataset, poisson_operator
from .io import load_checkpoint, read_field, read_pyramid, save_checkpoint, write_field, write_pyramid
from .krylov import gmres, make_preconditioner
from .model import evaluate_superres, forward, init_params
from .multigrid import build_hierarchy, solve
from .spectral import average_spectrum
from .training import TrainConfig, train
from .transforms import decompose
from .validation import check_dyadic_length


def _output_dir(args) -> str:
    out = args.output_dir or os.environ.get("M2NO_OUTPUT_DIR") or os.getcwd()
    os.makedirs(out, exist_ok=True)
    return out


def _write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv(rows) -> str:
    lines = []
    for row in rows:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    return "\n".join(lines) + "\n"


def _sine_field(dim: int, n: int, seed: int) -> Field:
    gen = rng.stream(seed, rng.PURPOSE_DATASET)
    h = 1.0 / (n + 1)
    if dim == 1:
        (x,) = grid_points(n, 1)
        coeffs = gen.uniform(-1.0, 1.0, size=8)
        data = sum(c * np.sin((j + 1) * np.pi * x) for j, c in enumerate(coeffs))
        return Field(data, (h,))
    xx, yy = grid_points(n, 2)
    coeffs = gen.uniform(-1.0, 1.0, size=8)
    pairs = [(i, j) for i in (1, 2, 3) for j in (1, 2, 3) if (i, j) != (3, 3)]
    data = sum(c * np.sin(i * np.pi * xx) * np.sin(j * np.pi * yy) for c, (i, j) in zip(coeffs, pairs))
    return Field(data, (h, h))


# ---------------------------------------------------------------------------
# subcommands


def cmd_filters(args) -> int:
    bank = derive_filter_bank(args.k)
    rows = [("matrix", "row") + tuple(f"c{i}" for i in range(args.k))]
    for name in ("h0", "h1", "g0", "g1"):
        mat = getattr(bank, name)
        for i in range(args.k):
            rows.append((name, i) + tuple(float(v) for v in mat[i]))
    path = os.path.join(_output_dir(args), f"filters_k{args.k}.csv")
    _write_text(path, _csv(rows))
    print(path)
    return 0


def cmd_transform(args) -> int:
    outdir = _output_dir(args)
    bank = derive_filter_bank(args.k)
    if args.inverse:
        pyramid, spacing = read_pyramid(args.input, with_spacing=True)
        data = _reconstruct(pyramid, bank)
        if spacing is None:
            spacing = tuple(1.0 / (s + 1) for s in data.shape)
        path = os.path.join(outdir, args.output or "field.fld")
        write_field(path, Field(data, spacing))
    else:
        field = read_field(args.input)
        pyr = decompose(field.data, bank, args.levels)
        path = os.path.join(outdir, args.output or "coeffs.fld")
        write_pyramid(path, pyr, spacing=field.spacing)
    print(path)
    return 0


def _reconstruct(pyramid, bank):
    from .transforms import reconstruct

    return reconstruct(pyramid, bank)


def cmd_solve(args) -> int:
    outdir = _output_dir(args)
    op = poisson_operator(args.dim, args.n)
    bank = derive_filter_bank(args.k)
    shape = (args.n,) * args.dim
    hier = build_hierarchy(
        op,
        shape,
        bank,
        depth=args.depth,
        pre_steps=args.pre,
        post_steps=args.post,
        smoother=args.smoother,
        omega=args.omega,
    )
    f = _sine_field(args.dim, args.n, args.seed)
    u, trace = solve(hier, f, tol=args.tol, max_cycles=args.max_cycles)
    rows = [("cycle", "relative_residual")] + list(zip(trace.iterations, trace.residuals))
    trace_path = os.path.join(outdir, "solve_trace.csv")
    _write_text(trace_path, _csv(rows))
    write_field(os.path.join(outdir, "solution.fld"), u)
    print(f"{trace_path} converged={trace.converged} cycles={trace.iterations[-1]}")
    if not trace.converged:
        raise NumericalError(
            f"V-cycle solve did not reach tol={args.tol} in {args.max_cycles} cycles"
        )
    return 0


_PRECOND_ALIASES = {"gs": "gauss_seidel"}


def cmd_gmres(args) -> int:
    outdir = _output_dir(args)
    op = poisson_operator(args.dim, args.n)
    shape = (args.n,) * args.dim
    b = _sine_field(args.dim, args.n, args.seed)
    kind = _PRECOND_ALIASES.get(args.precond, args.precond)
    if kind == "identity":
        precond = make_preconditioner("identity")
    elif kind == "gauss_seidel":
        precond = make_preconditioner("gauss_seidel", op=op, shape=shape)
    elif kind == "schwarz":
        precond = make_preconditioner(
            "schwarz", op=op, shape=shape, block_size=args.block_size, overlap=args.overlap
        )
    elif kind == "wavelet_mg":
        bank = derive_filter_bank(args.k)
        m = check_dyadic_length(args.n, args.k, name="n")
        depth = args.depth if args.depth is not None else max(1, m - 3)
        hier = build_hierarchy(op, shape, bank, depth=depth)
        precond = make_preconditioner("wavelet_mg", hier=hier)
    elif kind == "learned":
        if not args.model:
            raise ValueError("--model is required for the learned preconditioner")
        params, extra = load_checkpoint(args.model)
        reference = extra.get("train_input_norm")
        precond = make_preconditioner(
            "learned",
            model=params,
            reference_norm=float(reference) if reference else None,
        )
    else:
        raise ValueError(f"unknown preconditioner {args.precond!r}")
    x, trace = gmres(
        op, b, precond, tol=args.tol, restart=args.restart, max_iter=args.max_iter
    )
    rows = [("iteration", "relative_residual")] + list(zip(trace.iterations, trace.residuals))
    path = os.path.join(outdir, f"gmres_{args.precond}.csv")
    _write_text(path, _csv(rows))
    write_field(os.path.join(outdir, f"gmres_{args.precond}_solution.fld"), x)
    print(f"{path} converged={trace.converged} iterations={trace.iterations[-1]}")
    return 0


def cmd_dataset(args) -> int:
    outdir = _output_dir(args)
    pairs = make_dataset(args.kind, args.count, args.n, args.seed, dim=args.dim)
    rows = [("index", "input", "target", "seed")]
    for i, (a, u) in enumerate(pairs):
        in_name = f"sample_{i:04d}_input.fld"
        out_name = f"sample_{i:04d}_target.fld"
        write_field(os.path.join(outdir, in_name), a)
        write_field(os.path.join(outdir, out_name), u)
        rows.append((i, in_name, out_name, args.seed))
    manifest = os.path.join(outdir, "manifest.csv")
    _write_text(manifest, _csv(rows))
    print(manifest)
    return 0


_TRAIN_DEFAULTS = {
    "task": "poisson_rhs",
    "dim": "1",
    "n": "64",
    "count": "256",
    "valid_count": "64",
    "k": "2",
    "c": "4",
    "depth": "3",
    "layers": "4",
    "steps": "",
    "lr": "1e-3",
    "decay": "0.5",
    "decay_every": "100",
    "epochs": "200",
    "batch": "32",
    "seed": "0",
    "detail_maps": "off",
    "target_valid": "",
}


def parse_train_config(path: str) -> dict:
    """Parse a strict 'key = value' config file; unknown keys are rejected."""
    config = dict(_TRAIN_DEFAULTS)
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _TRAIN_DEFAULTS:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            config[key] = value
    return config


def cmd_train(args) -> int:
    outdir = _output_dir(args)
    cfg = parse_train_config(args.config)
    dim, n = int(cfg["dim"]), int(cfg["n"])
    count, valid_count = int(cfg["count"]), int(cfg["valid_count"])
    seed = int(cfg["seed"])
    pairs = make_dataset(cfg["task"], count + valid_count, n, seed, dim=dim)
    train_pairs, valid_pairs = pairs[:count], pairs[count:]
    steps = tuple(int(s) for s in cfg["steps"].split(",")) if cfg["steps"] else None
    params = init_params(
        k=int(cfg["k"]),
        c=int(cfg["c"]),
        depth=int(cfg["depth"]),
        layers=int(cfg["layers"]),
        dim=dim,
        steps=steps,
        use_detail_maps=cfg["detail_maps"] == "on",
        seed=seed,
    )
    config = TrainConfig(
        lr=float(cfg["lr"]),
        decay=float(cfg["decay"]),
        decay_every=int(cfg["decay_every"]),
        epochs=int(cfg["epochs"]),
        batch_size=int(cfg["batch"]),
        seed=seed,
        target_valid=float(cfg["target_valid"]) if cfg["target_valid"] else None,
    )
    params, history = train(params, train_pairs, valid_pairs, config)
    ckpt = os.path.join(outdir, "model.ckpt")
    input_norm = float(np.mean([np.linalg.norm(a.data) for a, _ in train_pairs]))
    save_checkpoint(
        ckpt,
        params,
        extra={"train_n": n, "task": cfg["task"], "seed": seed, "train_input_norm": input_norm},
    )
    rows = [("epoch", "train_loss", "valid_loss", "valid_rel_l2", "lr")] + list(
        zip(history.epochs, history.train_loss, history.valid_loss, history.valid_rel_l2, history.lr)
    )
    hist_path = os.path.join(outdir, "history.csv")
    _write_text(hist_path, _csv(rows))
    print(f"{ckpt} final_valid_rel_l2={history.valid_rel_l2[-1]!r}")
    return 0


def _read_manifest(path: str):
    base = os.path.dirname(os.path.abspath(path))
    with open(path) as fh:
        lines = [line.strip() for line in fh if line.strip()]
    pairs = []
    for line in lines[1:]:
        cells = line.split(",")
        pairs.append(
            (
                read_field(os.path.join(base, cells[1])),
                read_field(os.path.join(base, cells[2])),
            )
        )
    return pairs


def cmd_eval(args) -> int:
    outdir = _output_dir(args)
    params, extra = load_checkpoint(args.model)
    pairs = _read_manifest(args.data)
    factor = args.superres_factor
    train_n = int(extra.get("train_n", 0))
    rows = [("index", "relative_l2")]
    errors = []
    for i, (a, u) in enumerate(pairs):
        if factor > 1:
            if train_n:
                base_shape = (train_n,) * params.dim
                expected = tuple(s * factor for s in base_shape)
                if a.shape != expected:
                    raise ValueError(
                        f"sample {i} has shape {a.shape}; expected {expected} for "
                        f"superres factor {factor}"
                    )
                pred = evaluate_superres(params, a, base_shape=base_shape)
            else:
                pred = evaluate_superres(params, a)
        else:
            pred = forward(params, a)
        err = float(np.linalg.norm(pred.data - u.data) / np.linalg.norm(u.data))
        errors.append(err)
        rows.append((i, err))
    rows.append(("mean", float(np.mean(errors))))
    path = os.path.join(outdir, "metrics.csv")
    _write_text(path, _csv(rows))
    print(f"{path} mean_relative_l2={np.mean(errors)!r}")
    return 0


def cmd_spectrum(args) -> int:
    outdir = _output_dir(args)
    if len(args.pred) != len(args.target):
        raise ValueError("--pred and --target need the same number of files")
    errors = []
    for p_path, t_path in zip(args.pred, args.target):
        pred = read_field(p_path)
        target = read_field(t_path)
        errors.append(pred.data - target.data)
    spec = average_spectrum(errors)
    rows = [("bin", "average_energy")] + [
        (int(r), float(e)) for r, e in zip(spec.radii, spec.mean_energy)
    ]
    path = os.path.join(outdir, "spectrum.csv")
    _write_text(path, _csv(rows))
    print(path)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="m2no", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.add_argument("--output-dir", default=None, help="output directory (or $M2NO_OUTPUT_DIR)")
        p.set_defaults(func=func)
        return p

    p = add("filters", cmd_filters, help="export a filter bank as CSV")
    p.add_argument("--k", type=int, required=True)

    p = add("transform", cmd_transform, help="multiwavelet decompose/reconstruct a field file")
    p.add_argument("--input", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--levels", type=int, default=1)
    p.add_argument("--inverse", action="store_true")
    p.add_argument("--output", default=None)

    p = add("solve", cmd_solve, help="V-cycle solve of a seeded Poisson problem")
    p.add_argument("--dim", type=int, choices=(1, 2), default=1)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--smoother", choices=("jacobi", "gauss_seidel"), default="jacobi")
    p.add_argument("--omega", type=float, default=2.0 / 3.0)
    p.add_argument("--pre", type=int, default=2)
    p.add_argument("--post", type=int, default=2)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-cycles", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)

    p = add("gmres", cmd_gmres, help="preconditioned GMRES on a seeded Poisson problem")
    p.add_argument("--dim", type=int, choices=(1, 2), default=1)
    p.add_argument("--n", type=int, required=True)
    p.add_argument(
        "--precond",
        choices=("identity", "gs", "schwarz", "wavelet_mg", "learned"),
        default="identity",
    )
    p.add_argument("--tol", type=float, default=1e-11)
    p.add_argument("--restart", type=int, default=None)
    p.add_argument("--max-iter", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--depth", type=int, default=None)
    p.add_argument("--block-size", type=int, default=64)
    p.add_argument("--overlap", type=int, default=8)
    p.add_argument("--model", default=None)

    p = add("dataset", cmd_dataset, help="generate an operator-learning dataset")
    p.add_argument("--kind", choices=("poisson_rhs", "variable_coeff"), required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--dim", type=int, choices=(1, 2), default=1)

    p = add("train", cmd_train, help="train a model from a config file")
    p.add_argument("--config", required=True)

    p = add("eval", cmd_eval, help="evaluate a checkpoint on a dataset manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--superres-factor", type=int, default=1)

    p = add("spectrum", cmd_spectrum, help="radial error-energy spectrum of prediction files")
    p.add_argument("--pred", nargs="+", required=True)
    p.add_argument("--target", nargs="+", required=True)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"error: numerical: {exc}", file=sys.stderr)
        return 3
    except (FieldFileError, OSError) as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
