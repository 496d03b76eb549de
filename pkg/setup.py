"""Build hook for the optional compiled kernel.

If Cython or a C compiler is missing the package installs without it and the
pure-Python kernel is used at run time.
"""

import os

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            self.warn(f"compiled kernel not built ({exc}); falling back to pure Python")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            self.warn(f"compiled kernel not built ({exc}); falling back to pure Python")


def extensions():
    if os.environ.get("EVOECON_PURE_PYTHON"):
        return []
    try:
        from Cython.Build import cythonize
        import numpy  # noqa: F401
    except ImportError:
        return []
    from setuptools import Extension

    ext = Extension(
        "evoecon.kernels._ext",
        ["src/evoecon/kernels/_ext.pyx"],
        # no fused multiply-add, so results match the Python kernel bit for bit
        extra_compile_args=["-O2", "-ffp-contract=off"],
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
