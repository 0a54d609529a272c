from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-python fallback is selected at import time
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "deception_qcd._ckernels",
                ["src/deception_qcd/_ckernels.pyx"],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
