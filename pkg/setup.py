from setuptools import setup, find_packages

setup(
    name="crack_ensemble",
    version="1.0.0",
    description="Ensemble of no-pooling CNNs for pavement crack detection and measurement",
    author="Crack Ensemble Team",
    author_email="your-email@example.com",
    url="https://github.com/yourusername/crack_ensemble",
    packages=find_packages(exclude=["tests", "tests.*", "examples", "examples.*"]),
    include_package_data=True,
    install_requires=[
        "numpy>=1.22.0",
        "scipy>=1.7.0",
        "scikit-image>=0.19.0",
        "pandas>=1.5.0",
        "pydantic<2.0.0",
        "python-dotenv>=0.19.0",
        "sqlalchemy>=1.4.23",
        "plotly>=5.6.0",
        "networkx>=2.5.1",
        "Pillow>=9.0.0",
        "psutil",
    ],
    extras_require={
        "dev": [
            "pytest>=6.0.0",
            "pytest-cov>=2.12.0",
            "black>=21.5b2",
            "isort>=5.9.0",
            "flake8>=3.9.0",
            "mypy>=0.812",
        ],
    },
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Topic :: Scientific/Engineering :: Image Recognition",
    ],
    python_requires=">=3.9",
    entry_points={
        "console_scripts": [
            "crack-ensemble=cli.main:main",
        ],
    },
    long_description=open("README.md").read(),
    long_description_content_type="text/markdown",
)
