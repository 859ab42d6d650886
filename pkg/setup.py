"""Build script for the optional compiled geometry kernels.

The package works without the extension (a NumPy fallback is selected at
import time); building it just makes high-seed-count experiments faster.
"""

from setuptools import setup

try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        "src/mmwloc/_kernels/_geom.pyx",
        language_level="3",
    )
    include_dirs = [np.get_include()]
except ImportError:
    ext_modules = []
    include_dirs = []

setup(ext_modules=ext_modules, include_dirs=include_dirs)
