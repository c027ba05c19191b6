"""Command-line front end.

Exit codes: 0 success, 1 validation error (bad flags, bad config, bad
files), 2 runtime/numeric error (divergence, singular solves, undefined
rates). Commands that produce an output directory build it in a temp
location and rename it into place on success, so a failed run never
leaves a partial directory behind.

The AUGLEARN_THREADS environment variable caps torch's internal
parallelism for reproducible timing.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
import tempfile

import torch

from .checkpoint import read_checkpoint, write_checkpoint
from .config import RunConfig, load_run_config, run_config_to_dict
from .data import DomainDataset, generate, load_dataset, save_dataset, write_domain_file
from .errors import (
    AugLearnError,
    ConfigError,
    ContractViolation,
    IngestionError,
    NumericError,
    UndefinedRateError,
)
from .evalattack import aggregate, attack_curve, evaluate
from .freq import dct2, idct2
from .gradcheck import CHECKS, run_checks
from .layers import AugmenterNet, forward, init_params
from .plots import plot_accuracy_bars, plot_attack_curves, plot_training_curves
from .trainer import init_state, train, write_metrics_csv

VALIDATION_EXIT = 1
RUNTIME_EXIT = 2


def _threads_from_env() -> None:
    raw = os.environ.get("AUGLEARN_THREADS")
    if raw is None:
        return
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"AUGLEARN_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise ConfigError(f"AUGLEARN_THREADS must be >= 1, got {n}")
    torch.set_num_threads(n)


def _named_overrides(args) -> list[str]:
    """Translate the convenience flags into dotted-path overrides."""
    ov = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        ov.append(f"seed={args.seed}")
    if getattr(args, "mode", None) is not None:
        ov.append(f"train.mode={args.mode}")
    if getattr(args, "holdout", None) is not None:
        ov.append(f"data.holdout={args.holdout}")
    if getattr(args, "epsilon_grid", None) is not None:
        parts = [p.strip() for p in args.epsilon_grid.split(",") if p.strip()]
        try:
            eps = [float(p) for p in parts]
        except ValueError:
            raise ConfigError(f"--epsilon-grid must be comma-separated numbers, got {args.epsilon_grid!r}")
        ov.append(f"attack.epsilons={json.dumps(eps)}")
    return ov


def _load_config(args) -> RunConfig:
    if not getattr(args, "config", None):
        raise ConfigError("this command requires --config")
    return load_run_config(args.config, _named_overrides(args))


def _domains(rc: RunConfig) -> list[DomainDataset]:
    """Generate takes precedence; path is for externally prepared data."""
    if rc.data.generate is not None:
        return generate(rc.data.generate, rc.seed)
    return load_dataset(rc.data.path)


def _split_holdout(datasets: list[DomainDataset], holdout: str):
    ids = [d.domain_id for d in datasets]
    if holdout not in ids:
        raise ConfigError(f"holdout {holdout!r} not among domains {ids}")
    train_set = [d for d in datasets if d.domain_id != holdout]
    held = next(d for d in datasets if d.domain_id == holdout)
    return train_set, held


def _check_out(out: str) -> str:
    """Validate the output directory target before doing any real work."""
    if not out:
        raise ConfigError("this command requires --out")
    out = os.path.abspath(out)
    if os.path.exists(out):
        raise ConfigError(f"output directory {out} already exists")
    return out


def _into_out_dir(out: str, build) -> None:
    """Run ``build(tmpdir)`` then rename tmpdir to ``out`` atomically."""
    out = _check_out(out)
    parent = os.path.dirname(out)
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(dir=parent, prefix=".auglearn-tmp-")
    try:
        build(tmp)
        os.rename(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def _write_json(path, payload) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _load_phi(path) -> tuple:
    groups = read_checkpoint(path)
    if "phi" not in groups:
        raise IngestionError("checkpoint carries no augmenter parameters ('phi' group)", path=path)
    return groups


def cmd_gen_data(args) -> int:
    _check_out(args.out)
    rc = _load_config(args)
    if rc.data.generate is None:
        raise ConfigError("gen-data requires a data.generate section in the config")
    datasets = generate(rc.data.generate, rc.seed)

    def build(tmp):
        save_dataset(tmp, datasets)

    _into_out_dir(args.out, build)
    total = sum(len(d) for d in datasets)
    print(f"wrote {len(datasets)} domains, {total} samples, to {args.out}")
    return 0


def cmd_train(args) -> int:
    _check_out(args.out)
    rc = _load_config(args)
    datasets = _domains(rc)
    if rc.data.holdout is not None:
        datasets, held = _split_holdout(datasets, rc.data.holdout)
        print(f"holding out domain {held.domain_id}")
    state = train(datasets, rc.train)

    def build(tmp):
        _write_json(os.path.join(tmp, "config.json"), run_config_to_dict(rc))
        write_metrics_csv(state.history, os.path.join(tmp, "metrics.csv"))
        write_checkpoint(os.path.join(tmp, "final.augl"), {"theta": state.theta, "phi": state.phi})
        if state.history:
            plot_training_curves(state.history, os.path.join(tmp, "train_curves.png"))

    _into_out_dir(args.out, build)
    last = state.history[-1] if state.history else None
    tail = f", final L_inner {last.l_inner:.4f}" if last else ""
    print(f"trained mode={rc.train.mode} for {state.step} steps{tail}; outputs in {args.out}")
    return 0


def cmd_eval(args) -> int:
    if args.aggregate:
        try:
            accs = [float(p) for p in args.aggregate.split(",") if p.strip()]
        except ValueError:
            raise ConfigError(f"--aggregate must be comma-separated numbers, got {args.aggregate!r}")
        report = aggregate(accs)
        disp = report.display()
        for dom, val in disp["per_domain"].items():
            print(f"{dom} {val}")
        print(f"average {disp['average']}")
        return 0
    if args.out:
        _check_out(args.out)
    rc = _load_config(args)
    if not args.checkpoint:
        raise ConfigError("eval requires --checkpoint (or --aggregate)")
    if rc.data.holdout is None:
        raise ConfigError("eval requires a holdout domain (--holdout or data.holdout)")
    datasets = _domains(rc)
    _, held = _split_holdout(datasets, rc.data.holdout)
    groups = read_checkpoint(args.checkpoint)
    if "theta" not in groups:
        raise IngestionError("checkpoint carries no classifier parameters ('theta' group)", path=args.checkpoint)
    shape = tuple(held.images.shape[1:])
    template = init_state(rc.train, held.classes, shape[0], (shape[1], shape[2]))
    template.theta.require_structure(groups["theta"], "checkpoint theta")
    theta = groups["theta"]
    acc = evaluate(template.classifier, theta, held)
    report = aggregate([acc], (held.domain_id,))

    def build(tmp):
        _write_json(
            os.path.join(tmp, "report.json"),
            {
                "holdout": held.domain_id,
                "accuracy": acc,
                "display": report.display(),
                "checkpoint": os.path.abspath(args.checkpoint),
            },
        )
        plot_accuracy_bars(report, os.path.join(tmp, "accuracy.png"), title=f"held-out {held.domain_id}")

    if args.out:
        _into_out_dir(args.out, build)
    print(f"{held.domain_id} {report.display()['per_domain'][held.domain_id]}")
    return 0


def cmd_attack(args) -> int:
    if args.out:
        _check_out(args.out)
    rc = _load_config(args)
    if not args.checkpoint:
        raise ConfigError("attack requires --checkpoint")
    if rc.data.holdout is None:
        raise ConfigError("attack requires a holdout domain (--holdout or data.holdout)")
    datasets = _domains(rc)
    _, held = _split_holdout(datasets, rc.data.holdout)
    groups = read_checkpoint(args.checkpoint)
    if "theta" not in groups:
        raise IngestionError("checkpoint carries no classifier parameters ('theta' group)", path=args.checkpoint)
    shape = tuple(held.images.shape[1:])
    template = init_state(rc.train, held.classes, shape[0], (shape[1], shape[2]))
    template.theta.require_structure(groups["theta"], "checkpoint theta")
    curve = attack_curve(template.classifier, groups["theta"], held, rc.attack)

    def build(tmp):
        lines = ["epsilon,success_rate"] + [f"{repr(e)},{repr(r)}" for e, r in curve]
        with open(os.path.join(tmp, "attack.csv"), "w") as f:
            f.write("\n".join(lines) + "\n")
        _write_json(
            os.path.join(tmp, "report.json"),
            {
                "holdout": held.domain_id,
                "curve": [{"epsilon": e, "success_rate": r} for e, r in curve],
                "checkpoint": os.path.abspath(args.checkpoint),
            },
        )
        plot_attack_curves({held.domain_id: curve}, os.path.join(tmp, "attack_curve.png"))

    if args.out:
        _into_out_dir(args.out, build)
    for e, r in curve:
        print(f"epsilon {e:g}: success rate {r:.2f}%")
    return 0


def cmd_gradcheck(args) -> int:
    names = None
    if args.names:
        names = [n.strip() for n in args.names.split(",") if n.strip()]
        unknown = [n for n in names if n not in CHECKS]
        if unknown:
            raise ConfigError(f"unknown check(s) {unknown}; known: {sorted(CHECKS)}")
    results = run_checks(names)
    for r in results:
        mark = "PASS" if r.passed else "FAIL"
        print(f"{mark} {r.name}: {r.detail}")
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 0 if not failed else RUNTIME_EXIT


def cmd_export_aug(args) -> int:
    _check_out(args.out)
    rc = _load_config(args)
    if not args.checkpoint:
        raise ConfigError("export-aug requires --checkpoint")
    n = args.num
    if n < 0:
        raise ConfigError(f"-n must be >= 0, got {n}")
    groups = _load_phi(args.checkpoint)
    phi = groups["phi"]
    datasets = _domains(rc)
    if rc.data.holdout is not None:
        train_set, _ = _split_holdout(datasets, rc.data.holdout)
        source = train_set[0]
    else:
        source = datasets[0]
    if n > len(source):
        raise ConfigError(f"-n {n} exceeds domain {source.domain_id} size {len(source)}")
    aug = AugmenterNet(
        in_channels=int(source.images.shape[1]),
        channels=rc.train.aug_channels,
        residual=rc.train.aug_residual,
        identity=rc.train.aug_identity,
    )
    init_params(aug, 0).require_structure(phi, "checkpoint phi")

    def build(tmp):
        if n == 0:
            return
        x = source.images[:n].to(torch.float64)
        y = source.labels[:n]
        with torch.no_grad():
            pixel = forward(aug, phi, x)
            freq = idct2(forward(aug, phi, dct2(x)))
        write_domain_file(os.path.join(tmp, "raw.augt"), x.to(torch.float32), y)
        write_domain_file(os.path.join(tmp, "aug_pixel.augt"), pixel.to(torch.float32), y)
        write_domain_file(os.path.join(tmp, "aug_freq.augt"), freq.to(torch.float32), y)

    _into_out_dir(args.out, build)
    print(f"exported {n} triples from {source.domain_id} to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="auglearn", description="Learned data augmentation for domain generalization")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="run config JSON")
        sp.add_argument("--out", required=False, help="output directory (created; must not exist)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--holdout", help="override data.holdout")
        sp.add_argument("--mode", help="override train.mode")
        sp.add_argument("--set", action="append", metavar="PATH=VALUE", help="dotted-path config override, repeatable")

    sp = sub.add_parser("gen-data", help="generate a synthetic dataset directory")
    common(sp)
    sp.set_defaults(fn=cmd_gen_data)

    sp = sub.add_parser("train", help="train a model per the config")
    common(sp)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on the held-out domain")
    common(sp)
    sp.add_argument("--checkpoint", help="path to a .augl checkpoint")
    sp.add_argument("--aggregate", metavar="A,B,...", help="just aggregate per-domain accuracies and print the table average")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("attack", help="FGSM sweep against a checkpoint on the held-out domain")
    common(sp)
    sp.add_argument("--checkpoint", help="path to a .augl checkpoint")
    sp.add_argument("--epsilon-grid", dest="epsilon_grid", metavar="E1,E2,...", help="override attack.epsilons")
    sp.set_defaults(fn=cmd_attack)

    sp = sub.add_parser("gradcheck", help="run the finite-difference and oracle check suite")
    sp.add_argument("--names", help="comma-separated subset of checks to run")
    sp.set_defaults(fn=cmd_gradcheck)

    sp = sub.add_parser("export-aug", help="export (raw, augmented, frequency-augmented) sample triples")
    common(sp)
    sp.add_argument("--checkpoint", help="path to a .augl checkpoint containing phi")
    sp.add_argument("-n", "--num", type=int, default=8, help="number of samples to export")
    sp.set_defaults(fn=cmd_export_aug)
    return p


def run(argv=None) -> int:
    """Parse argv and execute; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors; that is a validation failure here
        code = e.code if isinstance(e.code, int) else 0
        return 0 if code == 0 else VALIDATION_EXIT
    try:
        _threads_from_env()
        return args.fn(args)
    except (ConfigError, ContractViolation, IngestionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return VALIDATION_EXIT
    except (NumericError, UndefinedRateError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return RUNTIME_EXIT
    except AugLearnError as e:
        print(f"error: {e}", file=sys.stderr)
        return RUNTIME_EXIT


def main() -> int:
    return run()
