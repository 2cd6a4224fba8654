import csv
import io
import json
from typing import Any, Iterable, Sequence

import yaml


def yaml_load(string: str) -> Any:
    """Load data from a YAML string."""
    return yaml.safe_load(string)


def json_dump(data: Any) -> str:
    """Dump data into a JSON string."""
    return json.dumps(data, indent=2) + "\n"


def json_load(string: str) -> Any:
    """Load data from a JSON string."""
    return json.loads(string)


def csv_dump(header: Sequence[str] | None, rows: Iterable[Sequence[Any]]) -> str:
    """Dump rows into a CSV string, floats written with full precision."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    if header:
        writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(value)) if isinstance(value, float) else value for value in row])
    return buffer.getvalue()
