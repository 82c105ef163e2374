"""Build script: compiles the optional Cython kernel extension.

Set SLOTEX_NO_EXT=1 to skip the extension entirely; the package then runs
on the pure-numpy kernel fallback selected at import time.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("SLOTEX_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "slotex._core",
                    ["src/slotex/_core.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={
                "language_level": 3,
                "boundscheck": False,
                "wraparound": False,
                "initializedcheck": False,
                "cdivision": True,
            },
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
