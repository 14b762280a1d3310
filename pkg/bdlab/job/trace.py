import re
from typing import Any, Dict, Iterable, List, Optional

import pandas as pd
import yaml


class Trace:
    """Records of a ``trace.yaml`` file.

    Each line of the file is one record in YAML flow style. `pattern` keeps only
    lines matching a regular expression, which avoids parsing large traces in
    full.

    """

    def __init__(self, tracefile: Optional[str] = None, pattern: Optional[str] = None):
        self.entries: List[Dict[str, Any]] = []
        if tracefile:
            self.load(tracefile, pattern)

    def load(self, tracefile: str, pattern: Optional[str] = None):
        matcher = re.compile(pattern) if pattern else None
        with open(tracefile, "r", encoding="utf-8") as file:
            lines: Iterable[str] = (line for line in file if line.strip())
            if matcher is not None:
                lines = (line for line in lines if matcher.search(line))
            self.entries.extend(yaml.safe_load(line) for line in lines)

    def filter(self, filter_dict: Dict[str, Any] = {}) -> List[Dict[str, Any]]:
        "Records containing every key of `filter_dict` with the given value."
        return [
            entry
            for entry in self.entries
            if all(key in entry and entry[key] == v for key, v in filter_dict.items())
        ]

    def to_dataframe(self, filter_dict: Dict[str, Any] = {}) -> pd.DataFrame:
        return pd.DataFrame(self.filter(filter_dict))

    def events(self) -> List[str]:
        return sorted({entry["event"] for entry in self.entries if "event" in entry})
