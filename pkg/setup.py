import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "tinydreamer.backend._fastops",
                ["src/tinydreamer/backend/_fastops.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except Exception:
    # No Cython / no compiler: the package falls back to the numpy kernels.
    ext_modules = []

setup(ext_modules=ext_modules)
