"""Build script for the optional compiled rasterization kernel.

The package works without the extension (a numpy fallback is selected at
import time), so a missing compiler or Cython must never fail the install.
Build in place with:  python setup.py build_ext --inplace
"""

from setuptools import Extension, setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext = Extension(
        "dualpatch._kernels._polyfill",
        sources=["src/dualpatch/_kernels/_polyfill.pyx"],
        # -ffp-contract=off keeps the point-in-polygon predicate bit-identical
        # to the numpy fallback (no FMA contraction of mul/add).
        extra_compile_args=["-O3", "-ffp-contract=off"],
    )
    ext_modules = cythonize([ext], language_level=3)
except Exception as exc:  # pragma: no cover - build environment dependent
    print(f"dualpatch: skipping compiled kernel ({exc}); pure fallback will be used")

setup(ext_modules=ext_modules)
