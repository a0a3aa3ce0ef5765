import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

ext_module = Extension(
    "sgvad.compute._kernels",
    ["src/sgvad/compute/_kernels.pyx"],
    include_dirs=[np.get_include()],
    extra_compile_args=["-O3"],
)

setup(ext_modules=cythonize(ext_module, language_level=3))
