"""Backend dispatch for the hot kernels.

Two interchangeable backends implement the same math:

  * "numba"  - @njit-compiled kernels (`impl_nb` for the LSTM, jitted
               `impl.simulate_temps`); default when numba imports.
  * "numpy"  - the vectorized reference implementations in `impl`.

Set STREAMTEMP_NUMBA=0 in the environment to force the numpy fallback
before import, or call `select_backend()` at runtime (tests and the
kernel benchmark do). Backends agree to float rounding; the parity test
pins them together.
"""

import os

from . import impl

_NUMPY_KERNELS = {
    "lstm_forward": impl.lstm_forward,
    "lstm_backward": impl.lstm_backward,
    "simulate_temps": impl.simulate_temps,
}
_NUMBA_KERNELS = None

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAS_NUMBA = False


def _jit_kernels():
    global _NUMBA_KERNELS
    if _NUMBA_KERNELS is None:
        from . import impl_nb

        _NUMBA_KERNELS = {
            "lstm_forward": numba.njit(cache=True)(impl_nb.lstm_forward),
            "lstm_backward": numba.njit(cache=True)(impl_nb.lstm_backward),
            "simulate_temps": numba.njit(cache=True)(impl.simulate_temps),
        }
    return _NUMBA_KERNELS


def select_backend(name=None):
    """Install kernel backend "numba" or "numpy"; returns the name used.

    With name=None, picks numba when available unless STREAMTEMP_NUMBA=0.
    """
    global lstm_forward, lstm_backward, simulate_temps, _ACTIVE
    if name is None:
        want_numba = os.environ.get("STREAMTEMP_NUMBA", "1") != "0"
        name = "numba" if (want_numba and HAS_NUMBA) else "numpy"
    if name == "numba":
        if not HAS_NUMBA:
            raise RuntimeError("numba backend requested but numba is not installed")
        table = _jit_kernels()
    elif name == "numpy":
        table = _NUMPY_KERNELS
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    lstm_forward = table["lstm_forward"]
    lstm_backward = table["lstm_backward"]
    simulate_temps = table["simulate_temps"]
    _ACTIVE = name
    return name


def active_backend():
    return _ACTIVE


select_backend()
