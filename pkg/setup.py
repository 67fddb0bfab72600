"""Build script for the optional compiled integration kernels.

The package works without the extension: spikelog._core falls back to a
numpy implementation with identical semantics when the compiled module
is missing, so the extension is marked optional and a failed build only
costs speed.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext = Extension(
        "spikelog._core._fixedpoint",
        sources=["src/spikelog/_core/_fixedpoint.pyx"],
        extra_compile_args=["-O3"],
    )
    ext.optional = True
    ext_modules = cythonize([ext], compiler_directives={"language_level": "3"})

setup(ext_modules=ext_modules)
