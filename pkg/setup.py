"""Build script for the optional compiled geometry kernels.

The package is fully functional without the extension: arm3d.geometry
falls back to the numpy kernels when the compiled module is missing.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "arm3d.geometry._kernels_cy",
                ["src/arm3d/geometry/_kernels_cy.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
