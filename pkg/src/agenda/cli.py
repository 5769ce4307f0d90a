"""One executable, eight subcommands, composable through the dataset format.

Every run writes a JSON manifest next to its primary output (override with
--manifest) holding the resolved options, inputs/outputs, seed, and tool
version — enough to replay the run exactly. Reports are CSV with '#'
comment lines carrying the same provenance; they contain no timestamps, so
identical manifests produce byte-identical reports.

Exit codes: 0 success, 2 usage error, 3 unreadable/invalid file, 4
violated invariant or numeric failure. Failures print a single
machine-parseable line to stderr.

--threads (or AGENDA_THREADS) caps worker parallelism; the numeric core is
vectorized in-process, so results never depend on it. It is recorded in
the manifest.
"""

import argparse
import json
import os
import sys
import time

from . import __version__, corrpca, probe, synthgen, tpe, trainer, verification
from .dataio import (
    read_dataset,
    split_by_identity,
    write_csv_report,
    write_dataset,
)
from .errors import AgendaError, DataFormatError, ValidationError
from .nets import load_checkpoint, save_checkpoint

TPE_LOSS_NOTE = "tpe_loss=triplet_probability(-log sigmoid(s_ap - s_an)), dot-product scores"


def _default_threads():
    env = os.environ.get("AGENDA_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ValidationError("AGENDA_THREADS must be an integer, got %r" % env)
    return os.cpu_count() or 1


def _add_common(sub):
    sub.add_argument("--seed", type=int, default=None,
                     help="override the seed used by every stochastic component")
    sub.add_argument("--threads", type=int, default=None,
                     help="cap worker parallelism (default: available cores, "
                          "or AGENDA_THREADS); results are independent of it")
    sub.add_argument("--manifest", default=None,
                     help="manifest path (default: <primary output>.manifest.json)")


def _parse_float_list(text, flag):
    try:
        values = [float(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ValidationError("%s: %s" % (flag, exc))
    if not values:
        raise ValidationError("%s needs at least one value" % flag)
    return values


def _comment_block(subcommand, seed, options):
    lines = ["tool_version=%s" % __version__, "subcommand=%s" % subcommand]
    if seed is not None:
        lines.append("seed=%d" % seed)
    lines += ["%s=%s" % (key, value) for key, value in options]
    return lines


def _write_manifest(args, subcommand, options, inputs, outputs, seed, started):
    path = args.manifest or (outputs[0] + ".manifest.json")
    payload = {
        "tool_version": __version__,
        "subcommand": subcommand,
        "options": {k: v for k, v in options},
        "inputs": list(inputs),
        "outputs": list(outputs),
        "seed": seed,
        "threads": args.threads if args.threads is not None else _default_threads(),
        "wall_time_s": round(time.monotonic() - started, 3),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _cmd_synth(args):
    started = time.monotonic()
    spec = synthgen.SynthSpec.from_file(args.spec) if args.spec else synthgen.SynthSpec()
    if args.seed is not None:
        spec.seed = args.seed
    dataset, metadata = synthgen.generate(spec)
    write_dataset(dataset, args.out)
    meta_path = args.meta or (args.out + ".meta.json")
    synthgen.write_metadata(metadata, meta_path)
    options = sorted(metadata["spec"].items())
    _write_manifest(args, "synth", options, [args.spec] if args.spec else [],
                    [args.out, meta_path], spec.seed, started)
    return 0


def _cmd_train(args):
    started = time.monotonic()
    config = trainer.TrainConfig.from_file(args.config) if args.config else trainer.TrainConfig()
    if args.seed is not None:
        config.seed = args.seed
    dataset = read_dataset(args.data)
    gen, cls, ensemble, log = trainer.train(dataset, config)
    save_checkpoint(args.out, gen, cls, ensemble)
    log_path = args.log or (args.out + ".log.csv")
    log.write_csv(log_path, _comment_block("train", config.seed, config.to_kv()))
    _write_manifest(args, "train", config.to_kv(), [args.data],
                    [args.out, log_path], config.seed, started)
    return 0


def _cmd_transform(args):
    started = time.monotonic()
    gen, _, _ = load_checkpoint(args.ckpt)
    dataset = read_dataset(args.data)
    write_dataset(trainer.transform(gen, dataset), args.out)
    _write_manifest(args, "transform", [], [args.ckpt, args.data], [args.out], None, started)
    return 0


def _cmd_corrpca(args):
    started = time.monotonic()
    if (args.fit is None) == (args.apply is None):
        raise ValidationError("corrpca needs exactly one of --fit or --apply")
    if args.fit:
        dataset = read_dataset(args.fit)
        subspace = corrpca.fit(dataset, args.delta)
        corrpca.save_subspace(subspace, args.out)
        outputs = [args.out]
        if args.spectrum:
            rows = [
                (idx, "%r" % ev, "%r" % corr)
                for idx, ev, corr in corrpca.correlation_spectrum(dataset)
            ]
            comments = _comment_block(
                "corrpca", args.seed,
                [("delta", args.delta), ("retained", subspace.retained_count),
                 ("input_dim", subspace.input_dim)],
            )
            write_csv_report(args.spectrum, comments,
                             ("index", "eigenvalue", "abs_spearman"), rows)
            outputs.append(args.spectrum)
        _write_manifest(args, "corrpca", [("mode", "fit"), ("delta", args.delta)],
                        [args.fit], outputs, args.seed, started)
    else:
        if not args.subspace:
            raise ValidationError("--apply needs --subspace")
        subspace = corrpca.load_subspace(args.subspace)
        dataset = read_dataset(args.apply)
        write_dataset(corrpca.project(subspace, dataset), args.out)
        _write_manifest(args, "corrpca", [("mode", "apply")],
                        [args.apply, args.subspace], [args.out], args.seed, started)
    return 0


def _cmd_probe(args):
    started = time.monotonic()
    seed = args.seed if args.seed is not None else 0
    if args.data:
        if args.train or args.test:
            raise ValidationError("--data replaces --train/--test, not both")
        dataset = read_dataset(args.data)
        fit_idx, eval_idx = split_by_identity(dataset, args.test_fraction, seed)
        train_set = dataset.subset(fit_idx)
        test_set = dataset.subset(eval_idx)
        inputs = [args.data]
    else:
        if not (args.train and args.test):
            raise ValidationError("probe needs --train and --test (or --data)")
        train_set = read_dataset(args.train)
        test_set = read_dataset(args.test)
        inputs = [args.train, args.test]
    model = probe.probe_train(train_set, args.epochs, args.rate, args.l2, seed)
    report = probe.probe_eval(model, test_set, train_size=train_set.n)
    options = [("epochs", args.epochs), ("rate", args.rate), ("l2", args.l2),
               ("standardized", "per-dimension z-score from the training split")]
    rows = [
        ("overall_accuracy_pct", "%r" % report.overall_accuracy),
        ("females_misclassified_pct", "%r" % report.females_misclassified),
        ("males_misclassified_pct", "%r" % report.males_misclassified),
        ("train_size", report.train_size),
        ("test_size", report.test_size),
    ]
    write_csv_report(args.report, _comment_block("probe", seed, options),
                     ("metric", "value"), rows)
    _write_manifest(args, "probe", options, inputs, [args.report], seed, started)
    return 0


def _cmd_eval(args):
    started = time.monotonic()
    seed = args.seed if args.seed is not None else 0
    dataset = read_dataset(args.data)
    fprs = _parse_float_list(args.fprs, "--fprs")
    if args.pairs:
        protocol = verification.read_pairs_csv(args.pairs, dataset)
        pair_source = [("pairs", args.pairs)]
        inputs = [args.data, args.pairs]
    else:
        protocol = verification.make_pairs(dataset, args.impostor_ratio, seed)
        pair_source = [("pairs", "generated"), ("impostor_ratio", args.impostor_ratio)]
        inputs = [args.data]
    report = verification.evaluate(dataset, protocol, fprs)
    for warning in report.warnings:
        print("warning: %s" % warning, file=sys.stderr)
    verification.write_report_csv(
        report, args.report, _comment_block("eval", seed, pair_source)
    )
    _write_manifest(args, "eval", pair_source + [("fprs", args.fprs)],
                    inputs, [args.report], seed, started)
    return 0


def _cmd_tpe(args):
    started = time.monotonic()
    seed = args.seed if args.seed is not None else 0
    if (args.train is None) == (args.apply is None):
        raise ValidationError("tpe needs exactly one of --train or --apply")
    if args.train:
        dataset = read_dataset(args.train)
        w = tpe.tpe_train(dataset, args.repeats, args.iterations, args.rate,
                          args.batch, seed)
        tpe.save_tpe(w, args.out)
        options = [("repeats", args.repeats), ("iterations", args.iterations),
                   ("rate", args.rate), ("batch", args.batch), ("note", TPE_LOSS_NOTE)]
        _write_manifest(args, "tpe", options, [args.train], [args.out], seed, started)
    else:
        if not args.matrix:
            raise ValidationError("--apply needs --matrix")
        w = tpe.load_tpe(args.matrix)
        dataset = read_dataset(args.apply)
        write_dataset(tpe.tpe_apply(w, dataset), args.out)
        _write_manifest(args, "tpe", [("mode", "apply"), ("note", TPE_LOSS_NOTE)],
                        [args.apply, args.matrix], [args.out], seed, started)
    return 0


def _sweep_eval_row(label, dataset, protocol, fpr, fit_idx, eval_idx):
    report = verification.evaluate(dataset, protocol, (fpr,))
    model = probe.probe_train(dataset.subset(fit_idx))
    probe_report = probe.probe_eval(model, dataset.subset(eval_idx), train_size=len(fit_idx))
    return (
        label,
        "%r" % report.per_group[1][0].tpr,
        "%r" % report.per_group[0][0].tpr,
        "%r" % report.bias[0],
        "%r" % probe_report.overall_accuracy,
    )


def _cmd_sweep(args):
    started = time.monotonic()
    seed = args.seed if args.seed is not None else 0
    modes = [m for m in (args.lambdas, args.ks, args.compare) if m]
    if len(modes) != 1:
        raise ValidationError("sweep needs exactly one of --lambdas, --ks, --compare")
    base = trainer.TrainConfig.from_file(args.config) if args.config else trainer.TrainConfig()
    if args.seed is not None:
        base.seed = args.seed
    dataset = read_dataset(args.data)
    rows = []
    options = [("fpr", args.fpr), ("impostor_ratio", args.impostor_ratio),
               ("probe_fraction", args.probe_fraction)]
    if args.compare:
        protocol = verification.make_pairs(dataset, args.impostor_ratio, seed)
        fit_idx, eval_idx = split_by_identity(dataset, args.probe_fraction, seed)
        rows.append(_sweep_eval_row("original", dataset, protocol, args.fpr, fit_idx, eval_idx))
        subspace = corrpca.fit(dataset, args.delta)
        rows.append(_sweep_eval_row(
            "corrpca", corrpca.project(subspace, dataset), protocol, args.fpr,
            fit_idx, eval_idx,
        ))
        gen, _, _, _ = trainer.train(dataset, base)
        rows.append(_sweep_eval_row(
            "agenda", trainer.transform(gen, dataset), protocol, args.fpr,
            fit_idx, eval_idx,
        ))
        options += [("mode", "compare"), ("delta", args.delta)]
    else:
        if args.lambdas:
            import dataclasses as _dc
            values = _parse_float_list(args.lambdas, "--lambdas")
            configs = [("lam=%s" % v, _dc.replace(base, lam=v)) for v in values]
            options.append(("lambdas", args.lambdas))
        else:
            import dataclasses as _dc
            values = [int(v) for v in _parse_float_list(args.ks, "--ks")]
            configs = [("k=%d" % v, _dc.replace(base, k=v, t_ep=None)) for v in values]
            options.append(("ks", args.ks))
        table = verification.ablation_sweep(
            dataset, configs, args.fpr, args.impostor_ratio, seed,
            args.probe_fraction, seed,
        )
        rows += [(label, "%r" % tm, "%r" % tf, "%r" % b, "%r" % acc)
                 for label, tm, tf, b, acc in table]
    write_csv_report(
        args.report,
        _comment_block("sweep", seed, options + base.to_kv()),
        ("param", "tpr_m", "tpr_f", "bias", "probe_accuracy_pct"),
        rows,
    )
    _write_manifest(args, "sweep", options, [args.data], [args.report], seed, started)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="agenda",
        description="Suppress a binary attribute in identity embeddings and "
                    "measure leakage and verification bias.",
        epilog="Full-scale reference hyperparameters (512-d descriptors): "
               "t_fc=66000 alpha1=1e-5, t_gtrain=30000 alpha2=1e-3, "
               "t_deb=1200 alpha3=1e-4, t_plat=2000, batch 400, "
               "g_thresh 0.9 or 0.8, lam 10 or 1, k 1 or 5. Defaults here "
               "are the desk-scale equivalents for 64-d corpora.",
    )
    subs = parser.add_subparsers(dest="subcommand", required=True)

    p = subs.add_parser("synth", help="generate a synthetic descriptor corpus")
    p.add_argument("--spec", help="key=value file with SynthSpec fields (defaults used if omitted)")
    p.add_argument("--out", required=True, help="output dataset file")
    p.add_argument("--meta", help="metadata sidecar path (default <out>.meta.json)")
    _add_common(p)
    p.set_defaults(func=_cmd_synth)

    p = subs.add_parser("train", help="run the four-stage adversarial training")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="key=value file with TrainConfig fields")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--log", help="training log CSV (default <out>.log.csv)")
    _add_common(p)
    p.set_defaults(func=_cmd_train)

    p = subs.add_parser("transform", help="re-embed a dataset through a trained generator")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_transform)

    p = subs.add_parser("corrpca", help="fit or apply the eigenspace-removal baseline")
    p.add_argument("--fit", help="dataset to fit the subspace on")
    p.add_argument("--delta", type=float, default=corrpca.DEFAULT_DELTA,
                   help="remove eigenvectors with |spearman| >= delta (default %(default)s)")
    p.add_argument("--apply", help="dataset to project with --subspace")
    p.add_argument("--subspace", help="subspace file produced by --fit")
    p.add_argument("--out", required=True, help="subspace file (fit) or dataset (apply)")
    p.add_argument("--spectrum", help="also write the per-eigenvector correlation CSV (fit mode)")
    _add_common(p)
    p.set_defaults(func=_cmd_corrpca)

    p = subs.add_parser("probe", help="attribute leakage probe (logistic regression)")
    p.add_argument("--train", help="training dataset (identity-disjoint from --test)")
    p.add_argument("--test", help="evaluation dataset")
    p.add_argument("--data", help="single dataset; split identity-disjoint internally")
    p.add_argument("--test-fraction", type=float, default=0.3,
                   help="heldout fraction for --data mode (default %(default)s)")
    p.add_argument("--epochs", type=int, default=probe.DEFAULT_EPOCHS)
    p.add_argument("--rate", type=float, default=probe.DEFAULT_RATE)
    p.add_argument("--l2", type=float, default=probe.DEFAULT_L2)
    p.add_argument("--report", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_probe)

    p = subs.add_parser("eval", help="group-wise verification TPR@FPR and bias")
    p.add_argument("--data", required=True)
    p.add_argument("--pairs", help="protocol CSV (index_a,index_b,genuine); generated if omitted")
    p.add_argument("--impostor-ratio", type=float, default=verification.DEFAULT_IMPOSTOR_RATIO,
                   help="impostor pairs per genuine pair when generating (default %(default)s)")
    p.add_argument("--fprs", default="1e-6,1e-5,1e-4,1e-3",
                   help="comma-separated FPR targets (default %(default)s)")
    p.add_argument("--report", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_eval)

    p = subs.add_parser("tpe", help="train or apply the triplet-probability embedding")
    p.add_argument("--train", help="dataset to train the matrix on")
    p.add_argument("--apply", help="dataset to project with --matrix")
    p.add_argument("--matrix", help="matrix file for --apply")
    p.add_argument("--out", required=True, help="matrix file (train) or dataset (apply)")
    p.add_argument("--repeats", type=int, default=tpe.DEFAULT_REPEATS)
    p.add_argument("--iterations", type=int, default=tpe.DEFAULT_ITERATIONS)
    p.add_argument("--rate", type=float, default=tpe.DEFAULT_RATE)
    p.add_argument("--batch", type=int, default=tpe.DEFAULT_BATCH)
    _add_common(p)
    p.set_defaults(func=_cmd_tpe)

    p = subs.add_parser("sweep", help="ablation grids over lam/k, or a three-way method comparison")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="base TrainConfig key=value file")
    p.add_argument("--lambdas", help="comma-separated debias weights to sweep")
    p.add_argument("--ks", help="comma-separated ensemble sizes to sweep")
    p.add_argument("--compare", action="store_true",
                   help="compare original vs corrpca vs agenda instead of a grid")
    p.add_argument("--delta", type=float, default=corrpca.DEFAULT_DELTA,
                   help="corrpca threshold in compare mode (default %(default)s)")
    p.add_argument("--fpr", type=float, default=1e-3,
                   help="operating FPR for the table (default %(default)s)")
    p.add_argument("--impostor-ratio", type=float, default=verification.DEFAULT_IMPOSTOR_RATIO)
    p.add_argument("--probe-fraction", type=float, default=0.3)
    p.add_argument("--report", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_sweep)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    if args.threads is None:
        args.threads = _default_threads()
    try:
        if args.threads < 1:
            raise ValidationError("--threads must be >= 1")
        return args.func(args)
    except DataFormatError as exc:
        print("agenda: error exit=3 kind=%s message=%s"
              % (exc.code, str(exc).replace("\n", " ")), file=sys.stderr)
        return 3
    except OSError as exc:
        print("agenda: error exit=3 kind=io message=%s"
              % str(exc).replace("\n", " "), file=sys.stderr)
        return 3
    except AgendaError as exc:
        print("agenda: error exit=4 kind=%s message=%s"
              % (type(exc).__name__, str(exc).replace("\n", " ")), file=sys.stderr)
        return 4


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
