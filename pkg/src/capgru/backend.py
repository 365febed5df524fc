"""Kernel backend selection.

The per-timestep engine loops are the hot path of every simulation. They
exist in two semantically identical flavours:

* ``capgru._kern_loops``  -- explicit loops, compiled with numba's ``@njit``
* ``capgru._kern_numpy``  -- vectorized numpy, no compilation step

``CAPGRU_BACKEND`` selects one:

* unset or ``auto``: numba if importable, numpy otherwise
* ``numba``: require numba (ImportError if missing)
* ``numpy``: pure numpy, never import numba

Both flavours produce bit-identical results in the mismatch-free regime
(all floating-point work there reduces to exact dyadic arithmetic, see
``circuit.py``); with capacitor mismatch enabled the two may differ at the
reassociation level of float sums, which every consumer tolerates.
"""

import os

_requested = os.environ.get("CAPGRU_BACKEND", "auto").strip().lower() or "auto"

if _requested not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"CAPGRU_BACKEND must be 'auto', 'numba' or 'numpy', got {_requested!r}"
    )

if _requested == "numpy":
    HAVE_NUMBA = False
else:
    try:
        import numba  # noqa: F401

        HAVE_NUMBA = True
    except ImportError:
        if _requested == "numba":
            raise
        HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` when the numba backend is active, identity otherwise.

    Defined here so the loop-kernel module imports cleanly even in a
    numpy-only environment (the undecorated functions then run as plain
    Python; they are only ever hot when numba is active).
    """
    if HAVE_NUMBA:
        import numba

        return numba.njit(*args, **kwargs)
    if args and callable(args[0]):
        return args[0]

    def wrap(f):
        return f

    return wrap


def get_kernels():
    """Return the active kernel module."""
    if BACKEND == "numba":
        from capgru import _kern_loops

        return _kern_loops
    from capgru import _kern_numpy

    return _kern_numpy
