"""
Scenario files: YAML documents validated by the pydantic models.

Every diagnostic is anchored to the YAML line of the offending field: the
document is composed once into a node tree, and the field path carried by a
pydantic error or a ConfigError is walked down that tree.
"""

import logging
from pathlib import Path
from typing import Optional, Sequence, Union

import yaml
from pydantic import ValidationError

from .errors import ConfigError, ScenarioError
from .models import Scenario

logger = logging.getLogger(__name__)


def _line_of(root: Optional[yaml.Node], path: Sequence) -> Optional[int]:
    """1-based line of the deepest node along `path` that exists."""
    if root is None:
        return None
    node = root
    for key in path:
        child = None
        if isinstance(node, yaml.MappingNode):
            for key_node, value_node in node.value:
                if key_node.value == str(key):
                    child = value_node
                    break
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and 0 <= key < len(node.value):
            child = node.value[key]
        if child is None:
            break
        node = child
    return node.start_mark.line + 1


def _format_loc(loc: Sequence) -> str:
    return ".".join(str(part) for part in loc)


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioError(f"invalid YAML: {getattr(exc, 'problem', exc)}", source,
                            mark.line + 1 if mark else None) from None

    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a mapping", source, 1)
    if "version" not in data:
        raise ScenarioError("missing required field 'version'", source, 1, ("version",))

    try:
        scenario = Scenario.model_validate(data)
    except ValidationError as exc:
        error = exc.errors()[0]
        loc = tuple(error["loc"])
        raise ScenarioError(f"{_format_loc(loc)}: {error['msg']}", source, _line_of(root, loc), loc) from None

    try:
        scenario.check()
    except ConfigError as exc:
        raise ScenarioError(str(exc), source, _line_of(root, exc.path), exc.path) from None
    logger.debug("Loaded scenario %r from %s", scenario.name, source)
    return scenario


def load_scenario(path: Union[str, Path]) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc.strerror}", str(path)) from None
    return parse_scenario(text, str(path))
