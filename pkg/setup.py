import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-python install; the numpy fallback is used at import
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("AMSDB_NO_EXT"):
    ext_modules = cythonize(
        [
            Extension(
                "amsdb.core._scan",
                ["src/amsdb/core/_scan.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3", "-ffast-math", "-march=native"],
                extra_link_args=["-lmvec", "-lm"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
