"""Build script: compiles the optional Cython solver kernels.

The package works without the extension (a pure numpy fallback is selected
at import time), so a missing compiler or Cython only costs speed.
Build in place with `python setup.py build_ext --inplace`.
"""
import sys

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools.extension import Extension

    ext_modules = cythonize(
        [
            Extension(
                "demandforge._kernels",
                ["src/demandforge/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except ImportError as exc:  # pragma: no cover - build-env dependent
    print(f"demandforge: building without native kernels ({exc})", file=sys.stderr)

setup(ext_modules=ext_modules)
