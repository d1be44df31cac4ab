from setuptools import setup, find_packages

setup(
    name="semiseg",
    version="1.0.0",
    description="Semi-supervised semantic segmentation with a GAN branch and a multi-label Mean Teacher",
    author="semiseg",
    packages=find_packages(include=["src", "src.*"]),
    python_requires=">=3.9",
    install_requires=[
        "torch>=2.1.0",
        "numpy>=1.24.0",
        "Pillow>=10.0.0",
        "scikit-learn>=1.3.0",
        "pydantic>=2.0.0",
        "pydantic-settings>=2.0.0",
        "python-dotenv>=1.0.0",
        "pyyaml>=6.0",
        "structlog>=23.1.0",
    ],
    entry_points={"console_scripts": ["semiseg=src.main:main"]},
)
