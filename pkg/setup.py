from setuptools import Extension, setup

ext_modules = [
    Extension(
        "wavediff.numerics.kernels._core",
        sources=["src/wavediff/numerics/kernels/_core.pyx"],
        extra_compile_args=["-O3"],
    )
]

if __name__ == "__main__":
    from Cython.Build import cythonize

    setup(ext_modules=cythonize(ext_modules, language_level="3"))
