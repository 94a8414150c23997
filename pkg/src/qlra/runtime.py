"""Thread control and the serial, bit-reproducible execution mode.

Inside :func:`serial_mode` the BLAS/LAPACK pools are limited to one thread
and sketches are accumulated one source row at a time in row order, so a
sketch built from a stream of row blocks is bitwise identical to one built
from the whole matrix.  The environment variable ``QLRA_THREADS`` caps the
thread pools when :func:`apply_thread_env` is called (the command-line
entry point does this on start-up).
"""

from __future__ import annotations

import contextlib
import os
import threading

from threadpoolctl import threadpool_limits

__all__ = ["serial_mode", "is_serial", "apply_thread_env", "THREADS_ENV"]

THREADS_ENV = "QLRA_THREADS"

_state = threading.local()


def is_serial() -> bool:
    return getattr(_state, "serial", False)


@contextlib.contextmanager
def serial_mode(enabled: bool = True):
    """Run the enclosed block single-threaded with deterministic accumulation order."""
    if not enabled:
        yield
        return
    prev = is_serial()
    _state.serial = True
    try:
        with threadpool_limits(limits=1):
            yield
    finally:
        _state.serial = prev


def apply_thread_env(environ=None):
    """Limit the BLAS pools to ``QLRA_THREADS`` threads if the variable is set.

    Returns the ``threadpool_limits`` controller (keep it alive for the
    duration of the program), or ``None`` when the variable is unset.
    """
    environ = os.environ if environ is None else environ
    raw = environ.get(THREADS_ENV)
    if not raw:
        return None
    n = int(raw)
    if n < 1:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return threadpool_limits(limits=n)
