"""Build script: compiles the optional Cython conv kernels.

The package works without the extension (a numpy fallback is selected at
import), so a failed compile only prints a warning instead of aborting the
install.
"""

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # missing compiler, etc.
            print(f"warning: skipping compiled kernels ({exc}); "
                  f"rapnet will use the pure-numpy backend")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: could not build {ext.name} ({exc}); "
                  f"rapnet will use the pure-numpy backend")


def extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    return cythonize(
        [Extension(
            "rapnet._convops",
            ["src/rapnet/_convops.pyx"],
            include_dirs=[numpy.get_include()],
            extra_compile_args=["-O3"],
        )],
        language_level=3,
    )


setup(ext_modules=extensions(), cmdclass={"build_ext": optional_build_ext})
