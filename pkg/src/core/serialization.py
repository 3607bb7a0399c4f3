"""Reading and writing models as UTF-8 JSON."""

import json
import logging
from pathlib import Path
from typing import Optional, TypeVar, Union

from pydantic import BaseModel

from .models import Instance

logger = logging.getLogger(__name__)

M = TypeVar("M", bound=BaseModel)


def read_json(source: Union[str, Path]) -> dict:
    """Parse a JSON file. Raises OSError or json.JSONDecodeError."""
    with open(source, "r", encoding="utf-8") as f:
        return json.load(f)


def parse_json(text: str) -> dict:
    return json.loads(text)


def load_model(cls: type[M], source: Union[str, Path]) -> M:
    logger.debug("Loading %s from %s", cls.__name__, source)
    return cls.model_validate(read_json(source))


def load_instance(source: Union[str, Path]) -> Instance:
    return load_model(Instance, source)


def dump_model(model: BaseModel, exclude: Optional[set] = None) -> str:
    """Deterministic JSON (declaration order, two-space indent, trailing newline)."""
    return model.model_dump_json(indent=2, exclude=exclude) + "\n"


def dump_data(data) -> str:
    return json.dumps(data, indent=2, ensure_ascii=False) + "\n"


def write_text(text: str, path: Optional[Union[str, Path]] = None) -> None:
    """Write to a file, or to stdout when no path is given."""
    if path is None:
        print(text, end="")
        return
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text, encoding="utf-8")
    logger.info("Wrote %s", path)
