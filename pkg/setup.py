"""Build script for the optional compiled support-counting kernels.

The extension is marked optional: when no C compiler or Cython is available the
package installs anyway and falls back to the pure-Python kernels at import.
"""
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover - build without Cython
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "xmodal._ckernels",
                ["src/xmodal/_ckernels.pyx"],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "initializedcheck": False,
        },
    )

setup(ext_modules=ext_modules)
