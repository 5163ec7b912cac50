"""Build script for the compiled stencil core.

The package works without the extension (a numpy fallback is selected at
import time), so the build degrades gracefully when no compiler or Cython
is available.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "kslab._kernels._stencil_core",
                ["src/kslab/_kernels/_stencil_core.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
