from setuptools import find_packages, setup

setup(
    name="bdlab",
    version="0.1",
    description="Decoder-only transformers as sequence labelers: repetition, "
    "unmasking, and early exit",
    packages=find_packages(exclude=["tests"]),
    package_data={"bdlab": ["*.yaml", "model/*.yaml"]},
    python_requires=">=3.8",
    install_requires=[
        "torch>=1.13",
        "pyyaml",
        "pandas",
        "numpy",
        "scipy",
        "path",
        "torchviz",
    ],
    extras_require={"test": ["pytest"]},
    zip_safe=False,
    entry_points={"console_scripts": ["bdlab = bdlab.cli:main",],},
)
