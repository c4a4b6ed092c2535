"""Build the optional compiled kernels.

The package works without them: ``rarelw._backend`` falls back to the
numpy implementations in ``rarelw._fallback`` whenever ``rarelw._kernels``
cannot be imported.  Set ``RARELW_NO_EXT=1`` to skip the build entirely.
"""
import os
import sys

from setuptools import setup

ext_modules = []
if not os.environ.get("RARELW_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        print("rarelw: Cython/numpy not available, building pure-Python package", file=sys.stderr)
    else:
        openmp = [] if sys.platform == "darwin" else ["-fopenmp"]
        ext = Extension(
            "rarelw._kernels",
            ["src/rarelw/_kernels.pyx"],
            include_dirs=[np.get_include()],
            extra_compile_args=["-O3"] + openmp,
            extra_link_args=openmp,
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        )
        ext_modules = cythonize(
            [ext],
            language_level=3,
            compiler_directives={"boundscheck": False, "wraparound": False, "cdivision": True},
        )

setup(ext_modules=ext_modules)
