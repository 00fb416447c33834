"""Build script for the optional compiled evaluation kernels.

The package works without the extension (a numpy fallback is selected at
import time); building it just makes the Monte-Carlo heavy paths faster.
"""

import numpy as np
from setuptools import setup
from setuptools.extension import Extension

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "pdefisher._kernels._fast",
                ["src/pdefisher/_kernels/_fast.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
