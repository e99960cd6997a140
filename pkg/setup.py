"""Build the optional compiled kernels; the package falls back to numpy without them."""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("tcomm._kernels", ["src/tcomm/_kernels.pyx"], extra_compile_args=["-O3", "-fno-math-errno"], optional=True)],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
