"""Build script for the optional compiled scoring kernels.

Set CUPID_PURE_PYTHON=1 to skip the extension entirely; the package then
runs on the numpy fallback selected at import time.
"""
import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("CUPID_PURE_PYTHON"):
    try:
        from Cython.Build import cythonize

        # No -ffast-math: the kernels' bit-reproducibility contract relies on
        # strict IEEE evaluation order.
        ext_modules = cythonize(
            [
                Extension(
                    "cupid.kernels._core",
                    ["src/cupid/kernels/_core.pyx"],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "initializedcheck": False,
            },
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
