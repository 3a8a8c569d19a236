"""Build script: compiles the PoW hash kernel when Cython and a C toolchain
are available, otherwise installs with the pure-Python fallback only."""
import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("LEASIM_PURE") != "1":
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "leasim._powcore",
                    ["src/leasim/_powcore.pyx"],
                    libraries=["crypto"],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
