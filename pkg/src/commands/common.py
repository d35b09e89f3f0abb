import functools
import logging
import platform
import sys
from contextlib import contextmanager
from importlib import metadata
from pathlib import Path
from typing import Dict, Iterator

import click

from src.models.errors import (
    DimensionMismatchError,
    GgdPottsError,
    GridFormatError,
    InvalidParameterError,
    NumericFailure,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_WARNINGS = 4

INCOMPLETE_MARKER = '.incomplete'
MANIFEST_NAME = 'manifest.txt'


def exit_code_for(error: GgdPottsError) -> int:
    if isinstance(error, (GridFormatError, InvalidParameterError, DimensionMismatchError)):
        return EXIT_USAGE
    if isinstance(error, NumericFailure):
        return EXIT_NUMERIC
    return EXIT_USAGE


def fail(message: str, code: int) -> None:
    click.echo(f"❌ {message}", err=True)
    sys.exit(code)


def warn(message: str) -> None:
    click.echo(f"⚠️  {message}", err=True)


def ok(message: str) -> None:
    click.echo(f"✅ {message}")


def handle_errors(func):
    """
    Turn toolkit exceptions into a one-line diagnostic and the matching
    exit code. Usage problems from click pass through untouched.
    """
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except GgdPottsError as e:
            logger.debug("command failed", exc_info=True)
            fail(f"{type(e).__name__}: {e}".replace('\n', ' '), exit_code_for(e))
        except OSError as e:
            fail(f"I/O error: {e}".replace('\n', ' '), EXIT_USAGE)
    return wrapper


@contextmanager
def output_dir(path: str) -> Iterator[Path]:
    """
    Create `path` and flag it with an `.incomplete` marker that is removed
    only when the block finishes without raising.
    """
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / INCOMPLETE_MARKER
    marker.write_text('run did not finish\n', encoding='utf-8')
    yield out
    marker.unlink()


@contextmanager
def output_file(path: str) -> Iterator[Path]:
    """Single-file variant of output_dir: the marker sits next to the file."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    marker = target.with_name(target.name + INCOMPLETE_MARKER)
    marker.write_text('write did not finish\n', encoding='utf-8')
    yield target
    marker.unlink()


def package_versions() -> Dict[str, str]:
    versions = {'python': platform.python_version()}
    for name in ('numpy', 'scipy', 'click', 'tqdm'):
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = 'unknown'
    return {f'version.{k}': v for k, v in versions.items()}
