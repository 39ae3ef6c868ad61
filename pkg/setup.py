import os

from setuptools import setup

ext_modules = []
if os.environ.get("UVC_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "uvc._coder",
                    ["src/uvc/_coder.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        # pure-Python fallback in uvc._coder_py is used instead
        ext_modules = []

setup(ext_modules=ext_modules)
