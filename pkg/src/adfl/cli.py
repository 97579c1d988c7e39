"""Command-line interface.

  adfl run        run a federated experiment and write metric CSVs
  adfl report     render PNG figures from previously written CSVs
  adfl make-data  write a synthetic corpus in the real dataset formats
"""

import argparse
import dataclasses
import sys

from . import datagen, harness, report


def _parse_seeds(text):
    return tuple(int(s) for s in text.split(",") if s.strip())


def _build_parser():
    parser = argparse.ArgumentParser(prog="adfl")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a federated learning experiment")
    run.add_argument("--config", help="YAML config file; omitted keys use defaults")
    run.add_argument("--aggregator", choices=harness.AGGREGATORS)
    run.add_argument("--seeds", type=_parse_seeds, help="comma-separated, e.g. 1,2,3")
    run.add_argument("--out", help="output directory for metric CSVs")
    run.add_argument(
        "--dump-adv-images",
        action="store_true",
        default=None,
        help="write every generated adversarial image as a P5/P6 pixmap",
    )
    run.add_argument("--rounds", type=int, help="number of server rounds")
    run.add_argument("--data-dir", help="dataset directory (IDX or CIFAR binaries)")

    rep = sub.add_parser("report", help="render figures from emitted CSVs")
    rep.add_argument("--out", default="results", help="directory holding the CSVs")

    mk = sub.add_parser("make-data", help="write a synthetic corpus")
    mk.add_argument("--dataset", choices=("mnist", "cifar10"), default="mnist")
    mk.add_argument("--out", required=True)
    mk.add_argument("--train", type=int, default=6000)
    mk.add_argument("--test", type=int, default=1000)
    mk.add_argument("--seed", type=int, default=0)
    return parser


def _run(args) -> int:
    cfg = harness.load_config(args.config) if args.config else harness.ExperimentConfig()
    overrides = {}
    if args.aggregator:
        overrides["aggregator"] = args.aggregator
    if args.seeds:
        overrides["seeds"] = args.seeds
    if args.out:
        overrides["output_dir"] = args.out
    if args.dump_adv_images is not None:
        overrides["dump_adv_images"] = args.dump_adv_images
    if args.rounds:
        overrides["rounds"] = args.rounds
    if args.data_dir:
        overrides["data_dir"] = args.data_dir
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)

    result = harness.run_experiment(cfg, progress=True)
    paths = harness.emit_metrics(result, cfg.output_dir)
    finals = result.final_iid_accuracies()
    print(
        f"{cfg.aggregator}: final IID accuracy "
        f"{finals.mean():.4f} +- {finals.std():.4f} over {len(finals)} seed(s)"
    )
    for path in paths:
        print(f"wrote {path}")
    return 0


def _report(args) -> int:
    for path in report.render_report(args.out):
        print(f"wrote {path}")
    return 0


def _make_data(args) -> int:
    if args.dataset == "mnist":
        datagen.write_digits_idx(args.out, n_train=args.train, n_test=args.test, seed=args.seed)
    else:
        datagen.write_cifar_batches(args.out, n_train=args.train, n_test=args.test, seed=args.seed)
    print(f"wrote synthetic {args.dataset} corpus to {args.out}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _run(args)
    if args.command == "report":
        return _report(args)
    return _make_data(args)


if __name__ == "__main__":
    sys.exit(main())
