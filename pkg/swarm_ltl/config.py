import logging
import os
from functools import lru_cache
from typing import Optional, Type, TypeVar

from pydantic import TypeAdapter

_T = TypeVar("_T")

LOG_ENV_VAR = "SWARM_LTL_LOG"


@lru_cache  # https://github.com/python/typeshed/issues/6347
def _get_schema(t: Type[_T]) -> TypeAdapter[_T]:  # type: ignore[misc]
    return TypeAdapter(t)


def check(t: Type[_T], value: object) -> _T:
    """Validate value is of static type t."""
    # https://github.com/python/mypy/issues/11470
    return _get_schema(t).validate_python(value)  # type: ignore[arg-type,no-any-return]


def configure_logging(level: Optional[str] = None) -> int:
    """Configure the package logger from SWARM_LTL_LOG (or level, if given).

    Only the CLI calls this, library code leaves handlers alone.
    Returns the numeric level that was applied.
    """
    name = (level or os.environ.get(LOG_ENV_VAR) or "WARNING").upper()
    numeric = logging.getLevelName(name)
    if not isinstance(numeric, int):
        raise ValueError(f"Invalid log level in {LOG_ENV_VAR}: '{name}'")

    logger = logging.getLogger("swarm_ltl")
    if not logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        logger.addHandler(handler)
    logger.setLevel(numeric)
    return numeric
