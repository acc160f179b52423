import re
import sys
from pathlib import Path

from setuptools import find_packages, setup

if not sys.version_info >= (3, 9):
    raise RuntimeError("swarm-ltl doesn't support Python earlier than 3.9")


def read_version():
    regexp = re.compile(r'^__version__\W*=\W*"([\d.abrc]+)"')
    init_py = Path(__file__).parent / "swarm_ltl" / "__init__.py"
    with init_py.open() as f:
        for line in f:
            match = regexp.match(line)
            if match is not None:
                return match.group(1)
    raise RuntimeError("Cannot find version in swarm_ltl/__init__.py")


classifiers = (
    "License :: OSI Approved :: Apache Software License",
    "Intended Audience :: Science/Research",
    "Programming Language :: Python :: 3",
    "Development Status :: 3 - Alpha",
    "Topic :: Scientific/Engineering",
)


setup(name="swarm-ltl",
      version=read_version(),
      description="GR(1) reactive synthesis and CBF/CLF control for robot swarms",
      long_description="\n\n".join((Path("README.rst").read_text(),
                                    Path("CHANGES.rst").read_text())),
      classifiers=classifiers,
      license="Apache 2",
      packages=find_packages(exclude=("tests",)),
      python_requires=">=3.9",
      install_requires=("numpy>=1.24", "scipy>=1.10", "matplotlib>=3.7", "pydantic>2,<3",
                        "lark>=1.1.3",
                        'typing_extensions>=3.10; python_version<"3.12"'),
      entry_points={"console_scripts": ["swarm-ltl = swarm_ltl.cli:main"]},
      include_package_data=True)
