#!/usr/bin/env python
import argparse
import os
import sys
import traceback
from typing import List, Optional

import yaml

from bdlab import Config, Dataset
from bdlab.job import Job
from bdlab.misc import ConfigurationError, DivergenceError, get_git_revision_short_hash
from bdlab.model import LabModel
from bdlab.model.masking import check_strategy
from bdlab.util.analyze import analysis_model, analyze_mask
from bdlab.util.dump import add_dump_parsers, dump
from bdlab.util.io import load_checkpoint
from bdlab.util.profile import profile
from bdlab.util.report import build_report, read_manifests

#: exit codes
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3

#: configuration keys without a --dotted.key flag (--model names a checkpoint)
NO_FLAG_KEYS = ["model"]


def argparse_bool_type(v):
    "Type for argparse that correctly treats Boolean values"
    if isinstance(v, bool):
        return v
    if v.lower() in ("yes", "true", "t", "y", "1"):
        return True
    elif v.lower() in ("no", "false", "f", "n", "0"):
        return False
    else:
        raise argparse.ArgumentTypeError("Boolean value expected.")


def argparse_list_type(element_type=int):
    "Type for argparse that reads comma-separated lists, e.g. 9,14,19,24"

    def parse(v):
        if isinstance(v, list):
            return v
        try:
            return [element_type(x.strip()) for x in v.split(",") if x.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(
                "comma-separated list of {} expected".format(element_type.__name__)
            )

    return parse


def _argtype(value):
    if isinstance(value, bool):
        return argparse_bool_type
    if isinstance(value, list):
        return argparse_list_type(type(value[0]) if value else int)
    return type(value)


def create_parser(config: Config) -> argparse.ArgumentParser:
    # every configuration key is also a flag
    parser_conf = argparse.ArgumentParser(add_help=False)
    for key, value in Config.flatten(config.options).items():
        if key in NO_FLAG_KEYS:
            continue
        parser_conf.add_argument("--" + key, type=_argtype(value))
    parser_conf.add_argument("--config", type=str, help="Configuration file (YAML/JSON)")

    parser = argparse.ArgumentParser("bdlab")
    subparsers = parser.add_subparsers(title="command", dest="command")
    subparsers.required = True

    parser_pretrain = subparsers.add_parser(
        "pretrain",
        help="Pretrain a causal language model on a synthetic copy corpus",
        parents=[parser_conf],
    )
    parser_finetune = subparsers.add_parser(
        "finetune",
        help="Fine-tune for sequence labeling with an adaptation strategy",
        parents=[parser_conf],
    )
    parser_finetune.add_argument(
        "--strategy",
        dest="finetune.strategy",
        choices=["masked", "repeat", "full_unmask", "middle_unmask"],
    )
    parser_finetune.add_argument("--r", dest="finetune.r", type=int)
    parser_finetune.add_argument("--exit-layer", dest="finetune.exit_layer", type=int)
    parser_finetune.add_argument(
        "--seed", type=int, help="Run a single seed instead of finetune.seeds"
    )
    parser_finetune.add_argument("--jobs", dest="finetune.jobs", type=int)

    parser_analyze = subparsers.add_parser(
        "analyze",
        help="Dump attention weights and block structure of a repeated input",
        parents=[parser_conf],
    )
    parser_analyze.add_argument("--n", dest="analyze.n", type=int)
    parser_analyze.add_argument("--k", dest="analyze.k", type=int)

    parser_profile = subparsers.add_parser(
        "profile",
        help="Measure speedups of early exit and repetition",
        parents=[parser_conf],
    )
    parser_profile.add_argument(
        "--exits", dest="profile.exits", type=argparse_list_type(int)
    )
    parser_profile.add_argument(
        "--reps", dest="profile.reps", type=argparse_list_type(int)
    )
    for p in [parser_analyze, parser_profile]:
        p.add_argument("--model", type=str, help="Checkpoint to load")

    parser_report = subparsers.add_parser(
        "report",
        help="Tabulate mean and confidence interval over run manifests",
        parents=[parser_conf],
    )
    parser_report.add_argument(
        "--runs", type=str, help="Folder with run manifests (default: output folder)"
    )

    add_dump_parsers(subparsers)
    return parser


def _configure(config: Config, args) -> Config:
    if args.config:
        config.load(args.config)

    # overwrite configuration with command line arguments
    for key, value in vars(args).items():
        if "." not in key and key != "verbose":
            continue
        if value is not None:
            config.set(key, value)
    if args.command == "finetune" and args.seed is not None:
        config.set("finetune.seeds", [args.seed])

    config.folder = os.environ.get("BDLAB_OUT") or config.get("output.folder")
    return config


def _run(config: Config, args) -> int:
    if args.command == "pretrain":
        config.set("job.type", "pretrain")
        job = Job.create(config)
        job.run()
        job.save()
    elif args.command == "finetune":
        config.set("job.type", "finetune")
        check_strategy(config.get("finetune.strategy"), config.get("finetune.r"))
        job = Job.create(config)
        job.run()
    elif args.command == "analyze":
        model = analysis_model(config, args.model)
        analysis = analyze_mask(
            model,
            config.get("analyze.n"),
            config.get("analyze.k"),
            seed=config.get("analyze.seed"),
            zero_tol=config.get("analyze.zero_tol"),
            positive_tol=config.get("analyze.positive_tol"),
        )
        for filename in analysis.save(config.folder):
            config.log("Wrote {}".format(filename))
        config.log(
            "share_bidirectional={:.6f}, verified={}".format(
                analysis.to_dict()["share_bidirectional"], analysis.verified
            )
        )
    elif args.command == "profile":
        if args.model:
            checkpoint = load_checkpoint(args.model)
            model = LabModel.create_from(checkpoint)
            dataset = Dataset.create(config, Dataset.tokenizer_from(checkpoint))
        else:
            dataset = Dataset.create(config)
            model = LabModel.create(
                config,
                dataset.vocab_size(),
                dataset.num_labels(),
                seed=config.get("train.seed"),
            )
        result = profile(
            config,
            model,
            dataset,
            config.get("profile.exits"),
            config.get("profile.reps"),
        )
        for filename in result.save(config.folder):
            config.log("Wrote {}".format(filename))
        config.log(yaml.dump(result.summary()), prefix="  ")
    elif args.command == "report":
        report = build_report(read_manifests(args.runs or config.folder))
        for filename in report.save(config.folder):
            config.log("Wrote {}".format(filename))
        config.print(report.markdown(), end="")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    # default config
    config = Config()
    parser = create_parser(config)
    args = parser.parse_args(argv)

    try:
        # dump command
        if args.command == "dump":
            dump(args)
            return EXIT_OK

        _configure(config, args)
        config.init_folder()
        config.log("Using folder: {}".format(config.folder))
        config.log("git commit: {}".format(get_git_revision_short_hash()), prefix="  ")

        # catch errors to log them
        try:
            return _run(config, args)
        except BaseException:
            config.log(traceback.format_exc(), echo=False)
            raise
    except DivergenceError as e:
        print("bdlab: training diverged: {}".format(e), file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigurationError, KeyError, ValueError, yaml.YAMLError, IOError) as e:
        print("bdlab: {}: {}".format(type(e).__name__, e), file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
