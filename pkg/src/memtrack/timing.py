"""Decorator logging the wall-clock time of experiment runners.

Usage:

```python
from memtrack.timing import timed

@timed
def sweep(...):
    ...
```
"""
import functools
import logging
import time
from typing import Any, Callable, TypeVar

T = TypeVar("T", bound=Callable[..., Any])

logger = logging.getLogger(__name__)


def timed(func: T) -> T:
    """Log the execution time of *func* at INFO; its result is returned unchanged."""

    @functools.wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        start = time.perf_counter()
        result = func(*args, **kwargs)
        elapsed = time.perf_counter() - start
        logger.info({"event": "timed", "function": func.__qualname__, "elapsed_seconds": round(elapsed, 6)})
        return result

    return wrapper  # type: ignore[return-value]
