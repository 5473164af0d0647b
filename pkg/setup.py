"""Build script for the optional compiled split-search core.

The package works without the extension; ``affectrisk.gbt`` falls back to
numpy kernels when ``_splitcore`` cannot be imported.
"""
import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("AFFECTRISK_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "affectrisk.gbt._splitcore",
                    ["src/affectrisk/gbt/_splitcore.pyx"],
                    include_dirs=[np.get_include()],
                    # no FMA contraction: kernel must match the numpy fallback bit for bit
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )

setup(ext_modules=ext_modules)
