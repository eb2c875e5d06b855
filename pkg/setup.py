"""Build script for the optional compiled tape kernels.

The package works without the extension (a numpy fallback is selected at
import time), so a failed compile only emits a warning.
"""

import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Build the extension if possible, fall back to pure Python otherwise."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # no compiler, missing headers, ...
            sys.stderr.write(f"warning: compiled kernels skipped ({exc}); "
                             "wenorl will use the pure-numpy backend\n")

    def build_extension(self, ext):
        if self.compiler.compiler_type == "unix":
            # Keep multiply-add unfused so the compiled backward sweep is
            # bit-identical to the pure-numpy backend.
            ext.extra_compile_args = [*ext.extra_compile_args,
                                      "-ffp-contract=off"]
        try:
            super().build_extension(ext)
        except Exception as exc:
            sys.stderr.write(f"warning: building {ext.name} failed ({exc}); "
                             "wenorl will use the pure-numpy backend\n")


def extensions():
    import numpy as np
    from Cython.Build import cythonize

    ext = Extension(
        "wenorl.tape._kernels",
        ["src/wenorl/tape/_kernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=extensions(), cmdclass={"build_ext": optional_build_ext})
