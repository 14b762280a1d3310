import os
import sys

import yaml

from bdlab import Config
from bdlab.config import CONFIG_FILE, TRACE_FILE
from bdlab.job import Trace
from bdlab.util.io import load_checkpoint


def add_dump_parsers(subparsers):
    "Adds ``bdlab dump trace|checkpoint|config`` to the command line parser."
    parser_dump = subparsers.add_parser("dump", help="Print outputs of a run")
    commands = parser_dump.add_subparsers(title="dump_command", dest="dump_command")
    commands.required = True

    parser = commands.add_parser("trace", help="Print a trace as CSV")
    parser.add_argument("source", help="Trace file or output folder")
    parser.add_argument("--event", "-e", type=str, help="Only records of this event")
    parser.add_argument("--keys", "-k", type=str, nargs="*", help="Columns to print")

    parser = commands.add_parser("checkpoint", help="Print checkpoint metadata")
    parser.add_argument("source", help="Checkpoint file")
    parser.add_argument("--keys", "-k", type=str, nargs="*", help="Entries to print")

    parser = commands.add_parser("config", help="Print a resolved configuration")
    parser.add_argument("source", help="Checkpoint, configuration file or output folder")
    parser.add_argument(
        "--minimal",
        "-m",
        action="store_true",
        help="Only options that differ from the defaults",
    )


def dump(args):
    if args.dump_command == "trace":
        dump_trace(args.source, args.event, args.keys)
    elif args.dump_command == "checkpoint":
        dump_checkpoint(args.source, args.keys)
    elif args.dump_command == "config":
        dump_config(args.source, args.minimal)
    else:
        raise ValueError("unknown dump command {}".format(args.dump_command))


def dump_trace(source: str, event=None, keys=None):
    tracefile = os.path.join(source, TRACE_FILE) if os.path.isdir(source) else source
    if not os.path.isfile(tracefile):
        raise IOError("trace file {} does not exist".format(tracefile))
    frame = Trace(tracefile).to_dataframe({"event": event} if event else {})
    if keys:
        frame = frame[[key for key in keys if key in frame.columns]]
    frame.to_csv(sys.stdout, index=False, float_format="%.17g")


def dump_checkpoint(source: str, keys=None):
    checkpoint = load_checkpoint(source)
    # weights are summarized by their metadata
    checkpoint["model"] = dict(meta=checkpoint["model"]["meta"])
    if keys is not None:
        checkpoint = {key: value for key, value in checkpoint.items() if key in keys}
    print("# Dump of checkpoint: {}".format(source))
    yaml.dump(checkpoint, sys.stdout)


def dump_config(source: str, minimal=False):
    config = Config()
    if os.path.isdir(source):
        config.load(os.path.join(source, CONFIG_FILE))
    elif os.path.splitext(source)[1] in [".yaml", ".yml", ".json"]:
        config.load(source)
    else:
        config.load_options(load_checkpoint(source)["config"])

    options = Config.flatten(config.options)
    if minimal:
        defaults = Config.flatten(Config().options)
        options = {
            key: value
            for key, value in options.items()
            if key not in defaults or defaults[key] != value
        }
    print(yaml.dump(Config.from_options(options).options), end="")
