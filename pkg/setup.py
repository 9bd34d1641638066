"""Build script for the optional compiled simulation kernel.

The package works without the extension (a pure-Python kernel is selected
at import time); building it just makes large Monte Carlo runs fast.
"""

import sys

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "ehlink._ckernel",
                ["src/ehlink/_ckernel.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
else:
    print("Cython not available; building without the compiled kernel",
          file=sys.stderr)

setup(ext_modules=ext_modules)
