import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Union

from src.models.errors import GridFormatError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def normalize_key(key: str) -> str:
    return key.strip().replace('-', '_')


def load_config(path: PathLike) -> Dict[str, str]:
    """
    Parse a flat `key = value` file (UTF-8, `#` starts a comment).
    Values stay strings; click converts them when used as option defaults.
    """
    values: Dict[str, str] = {}
    text = Path(path).read_text(encoding='utf-8')
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise GridFormatError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split('=', 1)
        key = normalize_key(key)
        if not key:
            raise GridFormatError(f"{path}:{lineno}: empty key")
        values[key] = value.strip()
    logger.debug("loaded %d config keys from %s", len(values), path)
    return values


def _format_value(value: Any) -> str:
    if isinstance(value, float):
        return repr(float(value))
    if isinstance(value, (list, tuple)):
        return ' '.join(_format_value(v) for v in value)
    if value is None:
        return ''
    return str(value)


def write_manifest(path: PathLike, values: Mapping[str, Any]) -> None:
    """
    Write a run manifest in the same flat format `load_config` reads.
    Keys are sorted so identical runs give identical files.
    """
    lines = ['# ggd-potts run manifest']
    for key in sorted(values):
        lines.append(f"{normalize_key(key)} = {_format_value(values[key])}")
    Path(path).write_text('\n'.join(lines) + '\n', encoding='utf-8')
