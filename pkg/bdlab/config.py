from __future__ import annotations

import copy
import datetime
import json
import os
import time
import uuid
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import yaml

#: file names inside the output folder
CONFIG_FILE = "config.yaml"
LOG_FILE = "lab.log"
TRACE_FILE = "trace.yaml"


def _parses_as(text: str, number_type) -> bool:
    try:
        number_type(text)
    except ValueError:
        return False
    return True


def _coerce(key: str, value: Any, current: Any) -> Any:
    """Converts `value` to the type of `current` where this loses nothing.

    Strings from the command line become numbers, and ints become floats for float
    options. Any other type mismatch is an error.

    """
    if current is None:
        if isinstance(value, str) and _parses_as(value, int):
            return int(value)
        if isinstance(value, str) and _parses_as(value, float):
            return float(value)
        return value
    if isinstance(current, float) and not isinstance(value, bool):
        if isinstance(value, int) or (
            isinstance(value, str) and _parses_as(value, float)
        ):
            value = float(value)
    elif isinstance(current, int) and isinstance(value, str):
        if _parses_as(value, int):
            value = int(value)
    if type(value) != type(current):
        raise ValueError(
            "key '{}' has incorrect type (expected {}, found {})".format(
                key, type(current).__name__, type(value).__name__
            )
        )
    return value


class Config:
    """Options of a lab run.

    The options form a nested dictionary addressed with dotted keys
    (``train.lr``). Defaults and their documentation live in
    :file:`config-default.yaml`; the options of the configured model are imported
    from the YAML file of that model (e.g. :file:`bdlab/model/decoder.yaml`).
    Files and command line flags may only set keys that exist in the defaults.

    """

    Overwrite = Enum("Overwrite", "Yes No Error")

    def __init__(self, folder: Optional[str] = None, load_default=True):
        self.options: Dict[str, Any] = {}
        if load_default:
            import bdlab
            from bdlab.misc import module_file

            with open(module_file(bdlab, "config-default.yaml"), "r") as file:
                self.options = yaml.safe_load(file)
            if self.options.get("model"):
                self._import(self.options["model"])

        #: output folder (manifests, checkpoints, results, log and trace)
        self.folder = folder
        #: prepended to every log line, set by jobs
        self.log_prefix: Optional[str] = None

    # -- access -------------------------------------------------------------------

    def get(self, key: str) -> Any:
        "Value of a dotted key; sections are returned as copies."
        value = self.options
        for name in key.split("."):
            if not isinstance(value, dict) or name not in value:
                raise KeyError("Error accessing {} for key {}".format(name, key))
            value = value[name]
        return copy.deepcopy(value) if isinstance(value, dict) else value

    def get_default(self, key: str) -> Any:
        """Like `get`, but follows model names.

        ``model.d_model`` resolves to ``decoder.d_model`` when option ``model`` is
        ``decoder``.

        """
        try:
            return self.get(key)
        except KeyError:
            parent, _, name = key.rpartition(".")
            if parent:
                try:
                    module = self.get(parent)
                except KeyError:
                    module = None
                if isinstance(module, str) and module:
                    return self.get_default(module + "." + name)
            raise

    def exists(self, key: str) -> bool:
        try:
            self.get(key)
        except KeyError:
            return False
        return True

    def _section(self, key: str, create: bool) -> Tuple[Dict[str, Any], str]:
        "The dictionary holding `key` and the last component of `key`."
        *parents, name = key.split(".")
        section = self.options
        for depth, parent in enumerate(parents):
            if parent not in section:
                if not create:
                    where = ".".join(parents[:depth]) or "root level"
                    raise KeyError(
                        "Key '{}' cannot be set: '{}' does not exist under {}".format(
                            key, parent, where
                        )
                    )
                section[parent] = {}
            section = section[parent]
            if not isinstance(section, dict):
                raise KeyError(
                    "Key '{}' cannot be set: '{}' is not a section".format(
                        key, ".".join(parents[: depth + 1])
                    )
                )
        return section, name

    def set(
        self, key: str, value, create=False, overwrite=Overwrite.Yes, log=False
    ) -> Any:
        """Sets a dotted key and returns the value now stored.

        Unknown keys raise :class:`KeyError` unless ``create`` is set; values whose
        type does not match the current value raise :class:`ValueError`.

        """
        section, name = self._section(key, create)
        current = section.get(name)
        if current is None and not create:
            raise KeyError("Key '{}' cannot be set: it does not exist".format(key))
        value = _coerce(key, value, current)
        if current is not None:
            if overwrite == Config.Overwrite.No:
                return current
            if overwrite == Config.Overwrite.Error and value != current:
                raise ValueError("key '{}' cannot be overwritten".format(key))
        section[name] = value
        if log:
            self.log("Set {}={}".format(key, value))
        return value

    def set_all(
        self, new_options: Dict[str, Any], create=False, overwrite=Overwrite.Yes
    ):
        for key, value in Config.flatten(new_options).items():
            self.set(key, value, create, overwrite)

    def _import(self, model: str):
        """Adds the section of a model from ``bdlab/model/<model>.yaml``.

        Values already present are kept, but must fit the types of the model
        defaults.

        """
        import bdlab.model
        from bdlab.misc import module_file

        with open(module_file(bdlab.model, model + ".yaml"), "r") as file:
            defaults = yaml.safe_load(file) or {}
        defaults.pop("import", None)
        merged = Config(load_default=False)
        merged.set_all(defaults, create=True)
        for section in defaults:
            if self.exists(section):
                merged.set_all({section: self.get(section)})
        self.set_all(merged.options, create=True)

        imports: List[str] = list(self.options.get("import") or [])
        if model not in imports:
            imports.append(model)
        self.options["import"] = imports

    # -- files --------------------------------------------------------------------

    def load(self, filename: str, create=False, overwrite=Overwrite.Yes):
        """Updates options from a YAML or JSON file; other options are kept."""
        with open(filename, "r", encoding="utf-8") as file:
            new_options = yaml.safe_load(file)
        if new_options is None:
            return
        if not isinstance(new_options, dict):
            raise ValueError(
                "configuration file {} does not contain a mapping".format(filename)
            )
        self.load_options(new_options, create=create, overwrite=overwrite)

    def load_options(
        self, new_options: Dict[str, Any], create=False, overwrite=Overwrite.Yes
    ):
        "Like `load`, for an already parsed dictionary."
        new_options = copy.deepcopy(new_options)
        imports = new_options.pop("import", [])
        if not isinstance(imports, list):
            imports = [imports]
        if new_options.get("model"):
            imports = [new_options["model"]] + imports
        for model in imports:
            self._import(model)
        self.set_all(new_options, create, overwrite)

    def save(self, filename: str):
        with open(filename, "w", encoding="utf-8") as file:
            yaml.dump(self.options, file)

    def save_to(self, checkpoint: Dict) -> Dict:
        checkpoint["config"] = copy.deepcopy(self.options)
        return checkpoint

    @staticmethod
    def create_from(checkpoint: Dict) -> Config:
        "Defaults updated with the options stored in a checkpoint."
        config = Config()
        if checkpoint.get("config") is not None:
            config.load_options(checkpoint["config"])
        if checkpoint.get("folder") is not None:
            config.folder = checkpoint["folder"]
        return config

    @staticmethod
    def from_options(options: Dict[str, Any] = {}, **more_options) -> Config:
        "A config holding exactly the given options, without any checks."
        config = Config(load_default=False)
        config.set_all(options, create=True)
        config.set_all(more_options, create=True)
        return config

    def to_json(self) -> str:
        "Key-sorted JSON of the options."
        return json.dumps(self.options, sort_keys=True)

    @staticmethod
    def flatten(options: Dict[str, Any], prefix: str = "") -> Dict[str, Any]:
        """Maps dotted keys to values. Empty sections are kept as values."""
        result: Dict[str, Any] = {}
        for key, value in options.items():
            dotted = prefix + key
            if isinstance(value, dict) and value:
                result.update(Config.flatten(value, dotted + "."))
            else:
                result[dotted] = value
        return result

    def clone(self, subfolder: str = None) -> Config:
        clone = Config(folder=self.folder, load_default=False)
        clone.options = copy.deepcopy(self.options)
        if subfolder is not None:
            clone.folder = os.path.join(self.folder, subfolder)
        return clone

    def init_folder(self) -> bool:
        """Creates the output folder and writes the options to it.

        Returns whether the folder was created.

        """
        created = not os.path.isdir(self.folder)
        os.makedirs(self.folder, exist_ok=True)
        self.save(os.path.join(self.folder, CONFIG_FILE))
        return created

    def logfile(self) -> str:
        return os.path.join(self.folder, LOG_FILE) if self.folder else os.devnull

    def tracefile(self) -> str:
        return os.path.join(self.folder, TRACE_FILE) if self.folder else os.devnull

    # -- log and trace ------------------------------------------------------------

    def print(self, *args, **kwargs):
        "Console output, suppressed when option verbose is false."
        if not self.exists("verbose") or self.get("verbose"):
            print(*args, **kwargs)

    def log(self, msg: str, echo=True, prefix=""):
        """Appends the lines of `msg` with a timestamp to ``lab.log``.

        Each line is indented with `prefix` and preceded by the log prefix of the
        current job.

        """
        lines = [(self.log_prefix or "") + prefix + line for line in msg.splitlines()]
        with open(self.logfile(), "a", encoding="utf-8") as file:
            for line in lines:
                file.write("{} {}\n".format(datetime.datetime.now(), line))
        if echo:
            for line in lines:
                self.print(line)

    def trace(
        self, echo=False, echo_prefix="", echo_flow=False, log=False, **kwargs
    ) -> Dict[str, Any]:
        """Appends `kwargs` as a one-line YAML record to ``trace.yaml``.

        A ``timestamp`` and a unique ``entry_id`` are added. With `log`, the
        record is also written to the log (and echoed if `echo`); with `echo`
        alone, it is only printed. Returns the record.

        """
        kwargs["timestamp"] = time.time()
        kwargs["entry_id"] = str(uuid.uuid4())
        if echo or log:
            text = yaml.dump(kwargs, default_flow_style=echo_flow)
            if log:
                self.log(text, echo, echo_prefix)
            else:
                for line in text.splitlines():
                    self.print(echo_prefix + line)
        record = yaml.dump(kwargs, width=float("inf"), default_flow_style=True)
        with open(self.tracefile(), "a", encoding="utf-8") as file:
            file.write(record.strip() + "\n")
        return kwargs

    # -- checks -------------------------------------------------------------------

    @staticmethod
    def _allowed(key: str, value, allowed_values) -> Any:
        if value not in allowed_values:
            raise ValueError(
                "Illegal value {} for key {}; allowed values are {}".format(
                    value, key, allowed_values
                )
            )
        return value

    def check(self, key: str, allowed_values) -> Any:
        "Value of `key`; raises :class:`ValueError` if not in `allowed_values`."
        return Config._allowed(key, self.get(key), allowed_values)

    def check_default(self, key: str, allowed_values) -> Any:
        return Config._allowed(key, self.get_default(key), allowed_values)

    def check_range(
        self, key: str, min_value, max_value, min_inclusive=True, max_inclusive=True
    ) -> Any:
        "Value of `key`; raises :class:`ValueError` if outside the given range."
        value = self.get_default(key)
        above = value > min_value or (min_inclusive and value == min_value)
        below = value < max_value or (max_inclusive and value == max_value)
        if not (above and below):
            raise ValueError(
                "Illegal value {} for key {}; must be in range {}{},{}{}".format(
                    value,
                    key,
                    "[" if min_inclusive else "(",
                    min_value,
                    max_value,
                    "]" if max_inclusive else ")",
                )
            )
        return value


class Configurable:
    """Mix-in for objects configured by a section of a :class:`Config`.

    Options are looked up under `configuration_key` (e.g. ``dataset`` or
    ``decoder``) with model names followed as in :meth:`Config.get_default`.

    """

    def __init__(self, config: Config, configuration_key: Optional[str] = None):
        self._init_configuration(config, configuration_key)

    def _init_configuration(self, config: Config, configuration_key: Optional[str]):
        "Lets subclasses read options before calling the base constructor."
        self.config = config
        self.configuration_key = configuration_key

    def _key(self, name: str) -> str:
        if self.configuration_key:
            return self.configuration_key + "." + name
        return name

    def get_option(self, name: str) -> Any:
        return self.config.get_default(self._key(name))

    def check_option(self, name: str, allowed_values) -> Any:
        return self.config.check_default(self._key(name), allowed_values)

    def set_option(
        self, name: str, value, create=False, overwrite=Config.Overwrite.Yes, log=False
    ) -> Any:
        return self.config.set(
            self._key(name), value, create=create, overwrite=overwrite, log=log
        )
