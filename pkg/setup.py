"""Build script for the optional compiled inference kernel.

The package is fully functional without the extension; ``ilprox.energy``
falls back to the pure-numpy sweep loop when the compiled module is
missing (or when ILPROX_NO_FAST=1 is set).
"""

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-python install still works
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "ilprox._fastinfer",
                ["src/ilprox/_fastinfer.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
