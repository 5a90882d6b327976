"""Build hook for the optional compiled kernel.

The package works without the extension (a pure-Python kernel is selected at
import time); compiling is best-effort so that source installs never fail on
machines without a C toolchain.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "fastnose._kernels._core",
                ["src/fastnose/_kernels/_core.pyx"],
                include_dirs=[numpy.get_include()],
                # No -ffast-math / -march=native: the compiled kernel must be
                # bit-identical to the pure-Python one (IEEE semantics).
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # pragma: no cover - toolchain-dependent
    sys.stderr.write(f"fastnose: building without compiled kernel ({exc})\n")

setup(ext_modules=ext_modules)
