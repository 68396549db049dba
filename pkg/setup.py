from setuptools import setup, find_packages

with open("requirements.txt") as f:
    requirements = f.read().splitlines()

setup(
    name="ifmimage",
    version="0.1.0",
    package_dir={"": "src"},  # packages are under src/
    packages=find_packages(where="src"),
    entry_points={
        "console_scripts": [
            "ifmimage=ifmimage.ifmimage:main",
            "ifi=ifmimage.ifmimage:main"
        ],
    },
    description="Simulator for interaction-free single-pixel imaging with undetected photons.",
    long_description=open("README.md").read(),
    long_description_content_type="text/markdown",
    license="MIT",
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Topic :: Scientific/Engineering :: Physics",
    ],
    python_requires=">=3.10",
    install_requires=requirements
)
