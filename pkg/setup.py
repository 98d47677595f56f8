"""Build hook for the optional compiled kernels.

The package is fully functional without the extension (a pure-numpy fallback
is selected at import time), so a failed compile downgrades to a warning
instead of aborting the install.
"""

import sys

from setuptools import setup

try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools.extension import Extension

    # -ffp-contract=off: the pure backend must match the compiled one bit for
    # bit, so FMA contraction (which changes rounding) is disabled.
    extensions = cythonize(
        [
            Extension(
                "hjpc.kernels._fast",
                ["src/hjpc/kernels/_fast.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover - exercised only on broken toolchains
    print(f"warning: compiled kernels unavailable ({exc}); using pure fallback", file=sys.stderr)
    extensions = []

setup(ext_modules=extensions)
