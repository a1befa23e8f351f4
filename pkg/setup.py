"""Build script for the optional compiled kernel backend.

The package works without the extension (a pure-Python twin of every kernel
ships in aim.numerics._pykernels); the extension only makes the hot loops
fast.  If the toolchain is missing we warn and install pure-Python only.
"""

import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


# -ffp-contract=off: the two backends must produce bitwise-identical floats,
# so fused multiply-add contraction has to stay off in the C build.
KERNEL_CFLAGS = ["-O3", "-ffp-contract=off", "-fno-fast-math"]


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # toolchain missing: fall back to pure Python
            print(f"warning: compiled kernels skipped ({exc}); "
                  "using pure-Python backend", file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: building {ext.name} failed ({exc}); "
                  "using pure-Python backend", file=sys.stderr)


def extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        print("warning: Cython not available; compiled kernels skipped",
              file=sys.stderr)
        return []
    return cythonize(
        [Extension(
            "aim.numerics._ckernels",
            ["src/aim/numerics/_ckernels.pyx"],
            extra_compile_args=KERNEL_CFLAGS,
            language="c",
        )],
        language_level=3,
    )


setup(
    ext_modules=extensions(),
    cmdclass={"build_ext": OptionalBuildExt},
)
