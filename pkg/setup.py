import os
import platform

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-python install; the package falls back at import
    cythonize = None


def _arch_flags():
    # popcnt and SSE4.1 min/max roughly halve the matching time on x86-64
    if os.environ.get("COMPOUNDEYE_PORTABLE"):
        return []
    if platform.machine().lower() in ("x86_64", "amd64"):
        return ["-march=x86-64-v2"]
    return []


ext_modules = []
if cythonize is not None and not os.environ.get("COMPOUNDEYE_NO_EXT"):
    ext_modules = cythonize(
        [
            Extension(
                "compoundeye.kernels._ckernels",
                ["src/compoundeye/kernels/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"] + _arch_flags(),
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
