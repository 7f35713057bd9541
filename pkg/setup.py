from setuptools import find_packages
from setuptools import setup

setup(
    name="LSEmbed",
    packages=find_packages(exclude=("tests",)),
    install_requires=["numpy", "scipy", "tqdm", "tensorboardX", "matplotlib", "pyyaml"],
    package_data={"lsembed": ["configs/*.yaml"]},
    entry_points={"console_scripts": ["lsembed=lsembed.cli:main"]},
)
