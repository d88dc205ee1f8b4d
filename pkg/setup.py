from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; ppmn.ops falls back to numpy kernels
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("ppmn.ops._kernels", ["src/ppmn/ops/_kernels.pyx"], extra_compile_args=["-O3"])],
        language_level="3",
    )

setup(ext_modules=ext_modules)
