import datetime
import json
import logging
import numbers
import os
from contextlib import contextmanager
from pathlib import Path
from typing import Iterable, List

import yaml

from zzaloha.model import ValidationError

logger = logging.getLogger(__name__)


def log_timer(func):
    """
    A decorator which when applied will make the total time taken to complete the function
    appear as a log message when the function completes
    :param func:
    :return: Decorator
    """

    def wrapper(*args, **kwargs):
        starttime = datetime.datetime.now()
        result = func(*args, **kwargs)
        elapsed = datetime.datetime.now() - starttime
        fname = getattr(func, '__name__', '?')
        logger.debug(
            f"Function {fname} completed in {elapsed.total_seconds()} seconds"
        )
        return result

    wrapper.__name__ = getattr(func, '__name__', 'wrapper')
    wrapper.__doc__ = func.__doc__
    return wrapper


def format_elapsed(elapsed_seconds: float) -> str:
    if elapsed_seconds > 3600:
        return f"{elapsed_seconds / 3600 :.2f} hours"
    elif elapsed_seconds > 120:
        return f"{elapsed_seconds / 60 :.2f} minutes"
    return f"{elapsed_seconds :.2f} seconds"


def load_conf(conf_file, **kwargs):
    """
    Read a YAML (or JSON) config and overlay every keyword argument that is not None, so
    command line flags win over file values
    """
    conf = {}
    if conf_file:
        logger.info(f"Loading configuration from {conf_file}")
        with open(conf_file) as fh:
            conf = yaml.safe_load(fh) or {}
        if not isinstance(conf, dict):
            raise ValidationError(f"Expected a mapping at the top level of {conf_file}")
        conf = {k.replace("-", "_"): v for k, v in conf.items()}
    conf.update((k, v) for k, v in kwargs.items() if v is not None)
    return conf


def default_output(name: str) -> Path:
    """ Output path under $ZZ_OUTDIR (or the working directory) """
    return Path(os.environ.get("ZZ_OUTDIR", ".")) / name


def parse_list(value, cast=float) -> List:
    """
    Accept a comma separated string or a list (as found in YAML) and cast each item
    """
    if value is None:
        return []
    if isinstance(value, str):
        items = [v for v in value.split(",") if v.strip()]
    elif isinstance(value, Iterable):
        items = list(value)
    else:
        items = [value]
    return [cast(v.strip() if isinstance(v, str) else v) for v in items]


@contextmanager
def atomic_output(path):
    """
    Yield a text handle to a temporary sibling of path, renamed over path on success and
    removed if anything fails
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.partial")
    try:
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if tmp.exists():
            tmp.unlink()
        raise


def write_json(path, data):
    with atomic_output(path) as fh:
        fh.write(json.dumps(data, indent=2, allow_nan=False) + "\n")
    logger.info(f"Wrote {path}")


def fmt(value) -> str:
    """ Full precision decimal for CSV cells, empty string for undefined values """
    if value is None:
        return ""
    if isinstance(value, numbers.Real) and not isinstance(value, numbers.Integral):
        return repr(float(value))
    return str(value)


class CsvWriter:
    """ Simple utility for writing rows of named items to a CSV handle """

    def __init__(self, output, headers, comments=()):
        self.headers = list(headers)
        self.output = output
        for c in comments:
            self.output.write(f"# {c}\n")
        self.output.write(",".join(self.headers) + "\n")

    def log(self, items):
        assert len(items) == len(self.headers), f"Expected {len(self.headers)} items to log, but got {len(items)}"
        self.output.write(
            ",".join(fmt(items[k]) for k in self.headers) + "\n"
        )
