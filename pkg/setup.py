"""Build script for the optional compiled shooting kernel.

The extension is optional: if Cython or a C compiler is unavailable the
package still installs and falls back to the pure-Python integrator.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("RODCHAIN_NO_EXT", "") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "rodchain._shoot",
                    ["src/rodchain/_shoot.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": 3},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
