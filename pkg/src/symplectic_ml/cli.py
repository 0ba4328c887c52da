"""Command-line interface.

Subcommands: generate, train, predict, predict-partial, eval-energy,
lyapunov, poincare, infer-params.  Exit codes: 0 on success, 1 on usage
errors, 2 on runtime failures (with a structured cause on stderr).

Every CSV output begins with ``# key=value`` metadata lines recording the
tool version, the seed, and a hash of the effective configuration.  The
seed comes from ``--seed`` when given, else the ``SYMPLECTIC_ML_SEED``
environment variable, else 0.  ``--jobs`` bounds worker processes where
supported; results are independent of the worker count.
"""

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from . import analysis, checkpoint, datapipe, lstm, models, training
from .dynamics import HH_FIELD, PhaseState, PotentialParams, integrate
from .errors import SymplecticMlError

SEED_ENV_VAR = "SYMPLECTIC_ML_SEED"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _resolve_seed(args):
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise _UsageError(f"{SEED_ENV_VAR} must be an integer, got {env!r}")
    return 0


def _parse_number(text):
    """A float, allowing exact fractions like 1/12."""
    try:
        if "/" in text:
            return float(Fraction(text))
        return float(text)
    except (ValueError, ZeroDivisionError):
        raise _UsageError(f"cannot parse number {text!r}")


def _parse_list(text):
    return [_parse_number(x) for x in text.split(",") if x.strip()]


def _parse_overrides(pairs):
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise _UsageError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def _config_hash(obj):
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _write_csv(path, names, rows, meta):
    lines = [f"# {k}={v}" for k, v in meta.items()]
    lines.append(",".join(names))
    for row in rows:
        lines.append(",".join(repr(float(x)) for x in row))
    Path(path).write_text("\n".join(lines) + "\n")


def _meta(seed, config_obj):
    return {
        "tool": "symplectic-ml",
        "version": __version__,
        "seed": seed,
        "config_hash": _config_hash(config_obj),
    }


def _read_observed(path):
    """(T, 2) of (q_x, p_x) from a CSV, skipping comments and headers."""
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            try:
                rows.append([float(parts[0]), float(parts[1])])
            except (ValueError, IndexError):
                continue
    if not rows:
        raise SymplecticMlError(f"no numeric rows in {path}")
    return np.array(rows)


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


def _sample_state(energy, pot, seed):
    rng = np.random.default_rng([seed, 0])
    return datapipe.sample_initial_condition(energy, pot, rng)


def _pot_from_args(args):
    alpha = args.alpha
    beta = args.beta if args.beta is not None else alpha
    return PotentialParams(alpha=alpha, beta=beta)


def _truth_trajectory(state0, pot, dt, n_steps, fine_factor=100):
    """High-accuracy reference: integrate finely, then take every
    ``fine_factor``-th sample so the grid matches the requested dt."""
    from .dynamics import coarse_grain

    fine = integrate(state0, dt / fine_factor, n_steps * fine_factor, HH_FIELD, pot)
    return coarse_grain(fine, fine_factor)


def _cmd_generate(args):
    seed = _resolve_seed(args)
    if args.config:
        cfg_dict = _load_json(args.config)
    else:
        cfg_dict = {
            "param_values": [[a, a] for a in _parse_list(args.alphas or "1.0")],
            "energies": _parse_list(args.energies or "0.125"),
            "n_per_cell": args.n_per_cell,
            "series_length": args.series_length,
            "transient": args.transient,
        }
    cfg_dict.update(_parse_overrides(args.set))
    cfg_dict["seed"] = seed
    try:
        config = datapipe.GenerationConfig.from_dict(cfg_dict)
    except (KeyError, TypeError, ValueError) as err:
        raise _UsageError(f"bad generation config: {err}")
    dataset = datapipe.generate_dataset(config)
    datapipe.save_dataset(dataset, args.out)
    print(
        f"generated {len(dataset)} trajectories "
        f"({dataset.n_states} states) -> {args.out} "
        f"[config_hash={_config_hash(config.to_dict())}]"
    )
    return 0


def _cmd_train(args):
    seed = _resolve_seed(args)
    cfg_dict = _load_json(args.config) if args.config else {}
    cfg_dict.update(_parse_overrides(args.set))
    cfg_dict["model_kind"] = args.model
    cfg_dict["seed"] = seed
    try:
        if "hidden" in cfg_dict:
            cfg_dict["hidden"] = tuple(cfg_dict["hidden"])
        config = training.TrainConfig(**cfg_dict)
    except (TypeError, ValueError) as err:
        raise _UsageError(f"bad training config: {err}")
    dataset = datapipe.load_dataset(args.dataset)
    report = training.train(config, dataset)
    with open(args.out, "w") as fh:
        json.dump(report.checkpoint, fh, indent=1)
    if args.history:
        training.save_history_csv(report, args.history)
    print(
        f"trained {args.model} for {config.epochs} epochs in "
        f"{report.wall_time:.1f}s: train_loss={report.train_losses[-1]:.6g} "
        f"val_loss={report.val_losses[-1]:.6g} -> {args.out}"
    )
    return 0


def _state_from_args(args, pot, seed):
    if args.ic:
        vals = _parse_list(args.ic)
        if len(vals) != 4:
            raise _UsageError("--ic needs q_x,q_y,p_x,p_y")
        return PhaseState(q=np.array(vals[:2]), p=np.array(vals[2:]))
    if args.energy is None:
        raise _UsageError("need --energy or --ic")
    return _sample_state(_parse_number(args.energy), pot, seed)


def _rollout_from_checkpoint(path, state0, pot, dt, n_steps):
    model, _ = checkpoint.load_checkpoint(path)
    if isinstance(model, models.SeparableModel):
        return models.asrnn_rollout(model, state0, pot, dt, n_steps)
    if isinstance(model, models.BaselineModel):
        return models.baseline_rollout(model, state0, pot, dt, n_steps)
    raise SymplecticMlError(
        f"checkpoint holds a {checkpoint.model_kind(model)}; need a rollout model"
    )


def _cmd_predict(args):
    seed = _resolve_seed(args)
    pot = _pot_from_args(args)
    state0 = _state_from_args(args, pot, seed)
    if args.checkpoint:
        traj = _rollout_from_checkpoint(
            args.checkpoint, state0, pot, args.dt, args.steps)
    else:
        traj = integrate(state0, args.dt, args.steps, HH_FIELD, pot)
    cfg = {
        "checkpoint": args.checkpoint, "alpha": pot.alpha, "beta": pot.beta,
        "dt": args.dt, "steps": args.steps,
    }
    rows = [
        (i * traj.dt, *traj.data[i]) for i in range(len(traj))
    ]
    _write_csv(args.out, ("t", "q_x", "q_y", "p_x", "p_y"), rows, _meta(seed, cfg))
    print(f"wrote {len(traj)} states -> {args.out}")
    return 0


def _cmd_eval_energy(args):
    seed = _resolve_seed(args)
    pot = _pot_from_args(args)
    state0 = _state_from_args(args, pot, seed)
    traj = _rollout_from_checkpoint(args.checkpoint, state0, pot, args.dt, args.steps)
    truth = _truth_trajectory(state0, pot, args.dt, args.steps)
    err = analysis.relative_energy_error(traj, truth)
    cfg = {
        "checkpoint": args.checkpoint, "alpha": pot.alpha, "beta": pot.beta,
        "dt": args.dt, "steps": args.steps,
    }
    rows = [(i * traj.dt, err[i]) for i in range(err.size)]
    _write_csv(args.out, ("t", "energy_error_pct"), rows, _meta(seed, cfg))
    print(
        f"mean energy error {float(np.mean(err)):.4f}% over {args.steps} steps "
        f"-> {args.out}"
    )
    return 0


def _lyapunov_task(task):
    """One grid point: sample an IC, estimate the maximal exponent."""
    (alpha, beta, energy, seed, index, dt, steps, renorm, ckpt_path) = task
    pot = PotentialParams(alpha=alpha, beta=beta)
    rng = np.random.default_rng([seed, index])
    state0 = datapipe.sample_initial_condition(energy, pot, rng)
    if ckpt_path:
        model, _ = checkpoint.load_checkpoint(ckpt_path)
        flow = model
    else:
        flow = HH_FIELD
    result = analysis.lyapunov_spectrum(flow, state0, pot, dt, steps, renorm)
    return alpha, beta, result.maximal


def _cmd_lyapunov(args):
    seed = _resolve_seed(args)
    if args.grid:
        lo, hi, step = (float(x) for x in args.grid.split(":"))
        alphas = list(np.arange(lo, hi + 0.5 * step, step))
    else:
        alphas = _parse_list(args.alphas or "1.0")
    energy = _parse_number(args.energy)
    tasks = [
        (a, a, energy, seed, i, args.dt, args.steps, args.renorm, args.checkpoint)
        for i, a in enumerate(alphas)
    ]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_lyapunov_task, tasks))
    else:
        results = [_lyapunov_task(t) for t in tasks]
    cfg = {
        "alphas": alphas, "energy": energy, "dt": args.dt, "steps": args.steps,
        "renorm": args.renorm, "checkpoint": args.checkpoint,
    }
    _write_csv(args.out, ("alpha", "beta", "lambda_max"), results, _meta(seed, cfg))
    print(f"wrote {len(results)} exponents -> {args.out}")
    return 0


def _cmd_poincare(args):
    seed = _resolve_seed(args)
    pot = _pot_from_args(args)
    state0 = _state_from_args(args, pot, seed)
    if args.checkpoint:
        traj = _rollout_from_checkpoint(
            args.checkpoint, state0, pot, args.dt, args.steps)
    else:
        traj = integrate(state0, args.dt, args.steps, HH_FIELD, pot)
    section = analysis.poincare_section(traj)
    cfg = {
        "alpha": pot.alpha, "beta": pot.beta, "dt": args.dt, "steps": args.steps,
        "checkpoint": args.checkpoint,
    }
    rows = list(zip(section.times, section.q_y, section.p_y, section.p_x))
    _write_csv(args.out, ("t", "q_y", "p_y", "p_x"), rows, _meta(seed, cfg))
    print(f"wrote {section.n} section points -> {args.out}")
    return 0


def _cmd_infer_params(args):
    seed = _resolve_seed(args)
    model, _ = checkpoint.load_checkpoint(args.encoder)
    if not isinstance(model, lstm.EncoderModel):
        raise SymplecticMlError("--encoder must point at an lstm-encoder checkpoint")
    observed = _read_observed(args.observed)
    est = lstm.infer_param_ensemble(model, observed, stride=args.stride)
    cfg = {"encoder": args.encoder, "observed": args.observed, "stride": args.stride}
    rows = [
        (i, est.mean[i], est.std[i], est.n_windows) for i in range(est.mean.size)
    ]
    _write_csv(args.out, ("channel", "mean", "std", "n_windows"), rows,
               _meta(seed, cfg))
    pretty = ", ".join(
        f"channel {i}: {est.mean[i]:.4f} +/- {est.std[i]:.4f}"
        for i in range(est.mean.size)
    )
    print(f"{pretty} over {est.n_windows} windows -> {args.out}")
    return 0


def _cmd_predict_partial(args):
    seed = _resolve_seed(args)
    encoder, _ = checkpoint.load_checkpoint(args.encoder)
    model, _ = checkpoint.load_checkpoint(args.checkpoint)
    if not isinstance(encoder, lstm.EncoderModel):
        raise SymplecticMlError("--encoder must point at an lstm-encoder checkpoint")
    if not isinstance(model, models.SeparableModel):
        raise SymplecticMlError("--checkpoint must point at a rollout model")
    observed = _read_observed(args.observed)
    pred = lstm.predict_from_partial(
        encoder, model, observed, args.dt, args.horizon, stride=args.stride)
    traj = pred.trajectory
    cfg = {
        "encoder": args.encoder, "checkpoint": args.checkpoint,
        "observed": args.observed, "dt": args.dt, "horizon": args.horizon,
        "stride": args.stride,
    }
    rows = [(i * traj.dt, *traj.data[i]) for i in range(len(traj))]
    _write_csv(args.out, ("t", "q_x", "q_y", "p_x", "p_y"), rows, _meta(seed, cfg))
    mean = ", ".join(f"{m:.4f}" for m in pred.estimate.mean)
    print(
        f"reconstructed state {np.round(pred.state0.vec(), 6).tolist()} "
        f"params [{mean}] -> {args.out}"
    )
    return 0


def build_parser():
    parser = _Parser(prog="symplectic-ml", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None,
                       help=f"RNG seed (default: ${SEED_ENV_VAR} or 0)")
        p.add_argument("--out", required=True, help="output path")

    p = sub.add_parser("generate", help="generate a trajectory dataset")
    common(p)
    p.add_argument("--config", help="JSON file of generation settings")
    p.add_argument("--alphas", help="comma list of coupling values")
    p.add_argument("--energies", help="comma list of energies (fractions ok)")
    p.add_argument("--n-per-cell", type=int, default=50)
    p.add_argument("--series-length", type=int, default=3000)
    p.add_argument("--transient", type=int, default=500)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config entry")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("train", help="train a model on a dataset")
    common(p)
    p.add_argument("--model", required=True,
                   choices=("baseline", "hnn", "asrnn", "encoder"))
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--config", help="JSON file of training settings")
    p.add_argument("--history", help="write per-epoch losses to this CSV")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=_cmd_train)

    def rollout_args(p, need_checkpoint):
        common(p)
        p.add_argument("--checkpoint",
                       **({"required": True} if need_checkpoint else {}))
        p.add_argument("--alpha", type=float, required=True)
        p.add_argument("--beta", type=float, default=None)
        p.add_argument("--energy", help="initial energy (fractions ok)")
        p.add_argument("--ic", help="explicit q_x,q_y,p_x,p_y")
        p.add_argument("--dt", type=float, default=0.1)
        p.add_argument("--steps", type=int, default=1000)

    p = sub.add_parser("predict", help="roll a model (or the analytic system) forward")
    rollout_args(p, need_checkpoint=False)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("eval-energy", help="relative energy error of a rollout")
    rollout_args(p, need_checkpoint=True)
    p.set_defaults(func=_cmd_eval_energy)

    p = sub.add_parser("lyapunov", help="maximal exponents over a coupling grid")
    common(p)
    p.add_argument("--grid", help="alpha grid lo:hi:step")
    p.add_argument("--alphas", help="comma list of alphas")
    p.add_argument("--energy", required=True)
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--steps", type=int, default=100000)
    p.add_argument("--renorm", type=float, default=1.0)
    p.add_argument("--checkpoint", help="rollout-model checkpoint (default: analytic)")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_lyapunov)

    p = sub.add_parser("poincare", help="surface-of-section points of a rollout")
    rollout_args(p, need_checkpoint=False)
    p.set_defaults(func=_cmd_poincare)

    p = sub.add_parser("infer-params", help="parameter ensemble from observations")
    common(p)
    p.add_argument("--encoder", required=True)
    p.add_argument("--observed", required=True, help="CSV of q_x,p_x rows")
    p.add_argument("--stride", type=int, default=1)
    p.set_defaults(func=_cmd_infer_params)

    p = sub.add_parser("predict-partial",
                       help="reconstruct the full state from observations and roll forward")
    common(p)
    p.add_argument("--encoder", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--observed", required=True)
    p.add_argument("--dt", type=float, default=0.1)
    p.add_argument("--horizon", type=int, default=1000)
    p.add_argument("--stride", type=int, default=1)
    p.set_defaults(func=_cmd_predict_partial)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    except SymplecticMlError as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
