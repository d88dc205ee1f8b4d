"""``ppmn`` command line: synth, train, eval, gradcheck.

Every command accepts ``--config FILE`` plus ``--key value`` overrides for any
config key (see :mod:`ppmn.config`). The named flags below are aliases for
config keys. Exit status: 0 success, 1 validation error, 2 numerical failure.
"""
import argparse
import contextlib
import logging
import os
import sys

from . import data as data_mod
from .checkpoint import load_checkpoint
from .config import RESOLVED_NAME, RunConfig, parse_overrides
from .errors import ConfigError, NumericalError, PPMNError
from .evaluator import OracleScorer, evaluate_trials, report, write_cmc_csv
from .model import GRADCHECK_CONFIG, build_model, gradcheck_groups
from .trainer import train, train_with_hnm

log = logging.getLogger("ppmn")

GRADCHECK_TOL = 1e-3

# flag dest -> config key, per command
ALIASES = {
    "synth": {"ids": "synth.ids", "per_camera": "synth.per_camera", "seed": "seed", "out": "data.root"},
    "train": {"seed": "seed", "out": "out_dir", "data": "data.root"},
    "eval": {"checkpoint": "eval.checkpoint", "data": "data.root", "trials": "eval.trials",
             "seed": "eval.seed", "scorer": "eval.scorer", "out": "out_dir"},
    "gradcheck": {"seed": "seed", "out": "out_dir"},
}


def build_parser():
    parser = argparse.ArgumentParser(prog="ppmn", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text,
                           epilog="Any config key may be overridden with --key value.")
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--threads", type=int, help="worker threads (falls back to $PPMN_THREADS)")
        return p

    p = command("synth", "write a synthetic two-camera dataset")
    p.add_argument("--ids", help="number of identities")
    p.add_argument("--per-camera", help="images per identity per camera")
    p.add_argument("--seed")
    p.add_argument("--out", help="dataset root to create")

    p = command("train", "stage-1 training, plus mining and stage 2 when hnm.enabled")
    p.add_argument("--seed")
    p.add_argument("--data", help="dataset root")
    p.add_argument("--out", help="output directory")

    p = command("eval", "single-shot CMC evaluation of a checkpoint")
    p.add_argument("--checkpoint")
    p.add_argument("--data", help="dataset root")
    p.add_argument("--trials", help="gallery re-draws to average")
    p.add_argument("--seed")
    p.add_argument("--scorer", choices=("model", "oracle"), help="'oracle' checks the plumbing only")
    p.add_argument("--out", help="output directory (default: the checkpoint's directory)")

    p = command("gradcheck", "finite-difference check of every parameter group")
    p.add_argument("--seed")
    p.add_argument("--out", help="output directory for the report")
    # test hook: scales conv weight gradients so the check must fail
    p.add_argument("--corrupt-backward", action="store_true", help=argparse.SUPPRESS)
    return parser


def resolve(args, extra, base=None):
    """Build the RunConfig for a parsed command line."""
    overrides = parse_overrides(extra)
    for dest, key in ALIASES[args.command].items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides[key] = value
    if args.threads is not None:
        overrides["threads"] = str(args.threads)
    base = dict(base or {})
    env_threads = os.environ.get("PPMN_THREADS")
    if env_threads:
        base.setdefault("threads", env_threads)
    config = RunConfig.load(args.config, overrides, base)
    if config["threads"] < 1:
        raise ConfigError("threads must be >= 1")
    return config


def _load_split(config):
    ds = data_mod.load_dataset(config["data.root"], config["model.input_size"])
    train_set, test_set = data_mod.split_identities(
        ds, config["data.n_train"], config["data.n_test"], config["data.split_seed"])
    return ds, train_set, test_set


def _require(config, key):
    if not config[key]:
        raise ConfigError(f"{key} is required")
    return config[key]


def cmd_synth(config):
    root = _require(config, "data.root")
    ds = data_mod.synth_dataset(config["synth.ids"], config["synth.per_camera"], config["seed"],
                                size=config["synth.size"])
    paths = data_mod.write_dataset(ds, root)
    config.write(root, "synth_config.txt")
    print(f"wrote {len(paths)} images for {len(ds)} identities to {root}")
    return 0


def cmd_train(config):
    _require(config, "data.root")
    out = config["out_dir"]
    config.write(out)
    _, train_set, _ = _load_split(config)
    model = build_model(config.model_config())
    tcfg = config.train_config()
    if tcfg.hnm_enabled:
        stage1, mined, stage2 = train_with_hnm(model, train_set, tcfg, out_dir=out)
        print(f"stage1 loss {stage1.initial_loss:.4f} -> {stage1.final_loss():.4f}")
        print(f"mined {len(mined.retained)} hard negatives")
        print(f"stage2 loss {stage2.initial_loss:.4f} -> {stage2.final_loss():.4f}")
    else:
        stage1 = train(model, train_set, tcfg, out_dir=out)
        print(f"stage1 loss {stage1.initial_loss:.4f} -> {stage1.final_loss():.4f}")
    print(f"outputs in {out}")
    return 0


def cmd_eval(config):
    scorer_kind = config["eval.scorer"]
    if scorer_kind not in ("model", "oracle"):
        raise ConfigError(f"eval.scorer must be 'model' or 'oracle', got {scorer_kind!r}")
    _require(config, "data.root")
    ds, _, test_set = _load_split(config)
    if config["eval.split"] == "all":
        test_set = ds
    elif config["eval.split"] != "test":
        raise ConfigError(f"eval.split must be 'test' or 'all', got {config['eval.split']!r}")
    if scorer_kind == "oracle":
        scorer, label = OracleScorer(), "oracle"
    else:
        ckpt = _require(config, "eval.checkpoint")
        scorer = build_model(config.model_config())
        scorer.store.load(load_checkpoint(ckpt))
        label = "PPMN"
    trials = config["eval.trials"]
    if trials < 1:
        raise ConfigError("eval.trials must be >= 1")
    _, mean, std = evaluate_trials(scorer, test_set, trials, config["eval.seed"])
    out = config["out_dir"]
    config.write(out, "eval_config.txt")
    write_cmc_csv(os.path.join(out, "cmc.csv"), mean)
    table = report(mean, label)
    with open(os.path.join(out, "cmc.txt"), "w") as fh:
        fh.write(table)
    print(table, end="")
    print(f"rank-1 std over {trials} trials: {100 * std[0]:.2f}")
    return 0


@contextlib.contextmanager
def _corrupted_conv_backward():
    from . import netgraph

    real = netgraph._BACKWARD["conv"]

    def broken(node, ctx, grad, store):
        in_grads, p_grads = real(node, ctx, grad, store)
        return in_grads, [p_grads[0] * 1.5] + list(p_grads[1:])

    netgraph._BACKWARD["conv"] = broken
    try:
        yield
    finally:
        netgraph._BACKWARD["conv"] = real


def cmd_gradcheck(config, corrupt=False):
    model = build_model(config.model_config())
    with _corrupted_conv_backward() if corrupt else contextlib.nullcontext():
        errs = gradcheck_groups(model, seed=config["seed"])
    lines = [f"{'group':<16} max_rel_err  status"]
    failed = False
    for group, err in errs.items():
        ok = err <= GRADCHECK_TOL
        failed |= not ok
        lines.append(f"{group:<16} {err:.3e}    {'ok' if ok else 'FAIL'}")
    text = "\n".join(lines) + "\n"
    out = config["out_dir"]
    config.write(out, "gradcheck_config.txt")
    with open(os.path.join(out, "gradcheck_report.txt"), "w") as fh:
        fh.write(text)
    print(text, end="")
    if failed:
        raise NumericalError(f"gradient check exceeded {GRADCHECK_TOL:g}")
    return 0


def _gradcheck_base():
    c = GRADCHECK_CONFIG
    return {
        "model.input_size": c.input_size, "model.backbone_channels": c.backbone_channels,
        "model.rep_channels": c.rep_channels, "model.branch_out_channels": c.branch_out_channels,
        "model.fusion_out_channels": c.fusion_out_channels, "model.fc_hidden": c.fc_hidden,
        "out_dir": "runs/gradcheck",
    }


def main(argv=None):
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "eval" and args.config is None and args.checkpoint:
            # reuse the training run's resolved config when it sits next to the checkpoint
            candidate = os.path.join(os.path.dirname(os.path.abspath(args.checkpoint)), RESOLVED_NAME)
            if os.path.exists(candidate):
                args.config = candidate
        base = {}
        if args.command == "gradcheck":
            base = _gradcheck_base()
        elif args.command == "eval" and args.checkpoint:
            base = {"out_dir": os.path.dirname(os.path.abspath(args.checkpoint))}
        config = resolve(args, extra, base)
        if args.command == "synth":
            return cmd_synth(config)
        if args.command == "train":
            return cmd_train(config)
        if args.command == "eval":
            return cmd_eval(config)
        return cmd_gradcheck(config, corrupt=args.corrupt_backward)
    except NumericalError as exc:
        print(f"ppmn: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (PPMNError, OSError) as exc:
        print(f"ppmn: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
