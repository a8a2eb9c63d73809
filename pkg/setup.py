"""
Setup script for the polymerlab package.
"""

from setuptools import setup
from pathlib import Path

# Read README
readme = Path(__file__).parent / "README.md"
long_description = readme.read_text() if readme.exists() else ""

setup(
    name="polymerlab",
    version="1.0.0",
    author="polymerlab Contributors",
    description="Exact enumeration, sampling and renewal analysis of self-attractive random walks",
    long_description=long_description,
    long_description_content_type="text/markdown",
    package_dir={"": "src"},
    py_modules=[
        "plab_core",
        "plab_oracle",
        "plab_srw",
        "plab_geometry",
        "plab_skeleton",
        "plab_sampler",
        "plab_renewal",
        "plab_experiments",
    ],
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Mathematics",
        "Topic :: Scientific/Engineering :: Physics",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
    ],
    python_requires=">=3.10",
    install_requires=[
        "numpy>=1.24",
        "scipy>=1.12",
    ],
    extras_require={
        "dev": ["pytest", "hypothesis", "black", "mypy"],
    },
    entry_points={
        "console_scripts": [
            "polymerlab=plab_experiments:main",
        ],
    },
    include_package_data=True,
    zip_safe=False,
)
