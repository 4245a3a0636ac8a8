import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # numpy fallback is used at import time
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("csirff.autodiff._ckernels", ["src/csirff/autodiff/_ckernels.pyx"],
                   include_dirs=[np.get_include()], extra_compile_args=["-O3"])],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
