"""Build hook for the optional compiled kernels.

The extension is optional: if Cython or a C compiler is missing the package
still installs and falls back to the numpy kernels in ``oaag._kernels_py``.
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
                "oaag._kernels",
                ["src/oaag/_kernels.pyx"],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
