import os
import sys

# Add the project root directory to the Python path
sys.path.insert(0, os.path.abspath(os.path.dirname(__file__)))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: convergence and end-to-end runs taking minutes")
