import functools
import inspect
import os
import shutil
import subprocess

from path import Path


class DimensionError(ValueError):
    """Shapes of the operands do not fit together."""


class ContractError(RuntimeError):
    """An operation was called in a state its contract excludes."""


class EmptyLossError(ContractError):
    """A loss was requested over zero active positions."""


class ConfigurationError(ValueError):
    """A setting or a combination of settings is not allowed."""


class ParseError(ValueError):
    """Malformed input file; carries the location of the problem."""

    def __init__(self, path: str, line: int, column: int, msg: str):
        super().__init__("{}:{}:{}: {}".format(path, line, column, msg))
        self.path = path
        self.line = line
        self.column = column


class IOB2Error(ValueError):
    """Tag sequence violates the IOB2 scheme at `index`."""

    def __init__(self, index: int, msg: str):
        super().__init__("IOB2 violation at index {}: {}".format(index, msg))
        self.index = index


class DivergenceError(FloatingPointError):
    """Training loss became non-finite or ran away."""


def bdlab_base_dir() -> Path:
    "Root of the source checkout (the folder containing the package)."
    import bdlab

    return Path(os.path.abspath(inspect.getfile(bdlab))).parent.parent


def module_file(module, filename: str) -> str:
    "Path of a data file shipped next to the source of `module`."
    f = Path(inspect.getfile(module)).parent / filename
    if not f.exists():
        raise FileNotFoundError("{} not found in module {}".format(filename, module))
    return str(f)


@functools.lru_cache(maxsize=None)
def get_git_revision_short_hash() -> str:
    if shutil.which("git") is None:
        return "No git binary found"
    try:
        revision = subprocess.check_output(
            ["git", "rev-parse", "--short", "HEAD"],
            cwd=str(bdlab_base_dir()),
            stderr=subprocess.DEVNULL,
        )
    except (OSError, subprocess.CalledProcessError):
        return "No working git repository found."
    return revision.strip().decode()
