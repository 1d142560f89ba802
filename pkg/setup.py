"""Build script: compiles the optional split-search extension.

The package works without the extension (a numpy fallback is selected at
import time), so any failure here downgrades to a pure-Python install
instead of aborting.
"""

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "shiftlens.kernels._ckernels",
                ["src/shiftlens/kernels/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level="3",
    )
except Exception as exc:  # pragma: no cover - build-environment dependent
    print(f"shiftlens: building without compiled kernels ({exc})")

setup(ext_modules=ext_modules)
