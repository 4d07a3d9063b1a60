from setuptools import find_packages, setup

exec(open("pyecodrive/version.py").read())

setup(
    name="pyecodrive",
    description=(
        "Spatial dynamic programming eco-driving for mild-hybrid vehicles: "
        "benchmark DP, DP-ECMS and look-ahead control"
    ),
    long_description=open("README.rst").read(),
    version=__version__,  # noqa
    packages=find_packages(exclude=["tests"]),
    include_package_data=True,
    python_requires=">=3.8.0",
    package_data={
        "": ["*.txt", "*.rst", "*.json", "*.csv"],
    },
    # This needs to be here and in environment.yml (for conda)
    install_requires=[
        "pandas >= 1.5",
        "pyarrow >= 11.0",
        "numpy >= 1.20",
        "scipy >= 1.6",
        "matplotlib >= 2.0.0",
    ],
    entry_points={
        "console_scripts": ["pyecodrive = pyecodrive.cli:main"],
    },
    classifiers=[
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3 :: Only",
        "License :: OSI Approved :: BSD License",
        "Development Status :: 3 - Alpha",
        "Environment :: Console",
        "Intended Audience :: Developers",
        "Intended Audience :: Science/Research",
        "Operating System :: OS Independent",
        "Programming Language :: Python",
        "Topic :: Scientific/Engineering",
    ],
)
