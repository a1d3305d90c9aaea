"""Build the optional compiled kernels.

The package works without them; ``mhecert.kernels`` falls back to the numpy
implementations in ``mhecert._core_py`` when ``mhecert._core`` is missing.
"""
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "mhecert._core",
                ["src/mhecert/_core.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
        compiler_directives={"boundscheck": False, "wraparound": False, "cdivision": True},
    )

setup(ext_modules=ext_modules)
