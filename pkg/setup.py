import setuptools

with open("README.md", "r") as fh:
    long_description = fh.read()

setuptools.setup(
    name="haloscan",
    version="0.0.1",
    description="Simulate quantum-enhanced haloscope searches for a synthetic axion signal",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=["haloscan"],
    package_data={"haloscan": ["defaults.ini"]},
    license="MIT",
    classifiers=[
        "Programming Language :: Python :: 3",
        "Operating System :: OS Independent",
    ],
    python_requires=">=3.9",
    entry_points={"console_scripts": ["haloscan=haloscan.cli:cli"]},
    install_requires=[
        "numpy==1.23.5",
        "scipy==1.9.3",
        "pandas==1.5.2",
        "joblib==1.2.0",
        "click==8.1.3",
    ],
)
