from setuptools import setup, find_packages

setup(
    name="tednet",
    version="0.1",
    packages=find_packages(exclude=["tests", "tests.*", "examples", "examples.*"]),
    install_requires=[
        "fastapi==0.104.1",
        "uvicorn==0.24.0",
        "pydantic==2.4.2",
        "numpy==1.24.3",
        "scipy==1.11.3",
        "scikit-image==0.21.0",
        "python-dotenv==1.0.0",
        "pytest==7.4.3",
        "hypothesis==6.88.1",
        "httpx>=0.24.0,<0.28",
    ],
    entry_points={
        "console_scripts": [
            "ted-net=src.cli:run",
        ],
    },
)
