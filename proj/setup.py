"""Builds the C++ extension through CMake and drops it into the package."""

import os
import subprocess
import sys
from pathlib import Path

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class CMakeExtension(Extension):
    def __init__(self, name):
        super().__init__(name, sources=[])


class CMakeBuild(build_ext):
    def build_extension(self, ext):
        source = Path(__file__).resolve().parent
        build = Path(self.build_temp).resolve()
        build.mkdir(parents=True, exist_ok=True)
        out = Path(self.get_ext_fullpath(ext.name)).resolve().parent

        cfg = "Debug" if self.debug else "Release"
        subprocess.run(
            [
                "cmake",
                str(source),
                f"-DCMAKE_BUILD_TYPE={cfg}",
                "-DLAMBDAPOP_PYTHON_ONLY=ON",
                f"-DPython3_EXECUTABLE={sys.executable}",
            ],
            cwd=build,
            check=True,
        )
        subprocess.run(
            ["cmake", "--build", str(build), "--target", "_lambdapop", "-j", str(os.cpu_count() or 1)],
            check=True,
        )

        out.mkdir(parents=True, exist_ok=True)
        built = next((build / "python" / "lambdapop").glob("_lambdapop*"))
        self.copy_file(built, out / built.name)


setup(
    ext_modules=[CMakeExtension("lambdapop._lambdapop")],
    cmdclass={"build_ext": CMakeBuild},
)
