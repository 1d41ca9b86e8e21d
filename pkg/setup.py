"""Build script for the compiled event-loop engine.

The package works without the extension (a pure-Python engine is selected
at import time), so a failed compile only costs speed.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

extensions = []
if cythonize is not None:
    extensions = cythonize(
        [
            Extension(
                "kvoverlap.pipesim._engine",
                sources=["src/kvoverlap/pipesim/_engine.pyx"],
            )
        ],
        compiler_directives={
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "language_level": "3",
        },
    )

setup(ext_modules=extensions)
