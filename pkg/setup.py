"""Build script: compiles the ADMM hot-loop extension when a toolchain is available.

The package works without the extension; ``mpsf.optimizer`` falls back to a
pure-numpy kernel at import time.
"""
import sys

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext = Extension(
        "mpsf._qp_core",
        ["src/mpsf/_qp_core.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    ext_modules = cythonize([ext], language_level=3)
except Exception as exc:  # pragma: no cover - build environment dependent
    sys.stderr.write(f"mpsf: building without compiled QP core ({exc})\n")

setup(ext_modules=ext_modules)
