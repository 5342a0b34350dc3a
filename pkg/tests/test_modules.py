import importlib
import logging
import sys

import pytest

logger = logging.getLogger("module_test")

# Modules the pipeline imports
modules_to_test = [
    "numpy",
    "scipy",
    "skimage",
    "pandas",
    "pydantic",
    "dotenv",
    "sqlalchemy",
    "plotly",
    "networkx",
    "PIL",
    "psutil",
]

package_modules = [
    "models.network",
    "models.pipeline",
    "models.dataset",
    "models.run_records",
    "services.nn_core",
    "services.model_io",
    "services.patches",
    "services.training",
    "services.gradcheck",
    "services.ensemble",
    "services.metrics",
    "services.morphology",
    "services.skeleton",
    "services.dataset_io",
    "services.visualizer",
    "services.run_registry",
    "database.db_manager",
    "utils.config",
    "utils.image_io",
    "cli.main",
]


@pytest.mark.parametrize("module_name", modules_to_test)
def test_import(module_name):
    """Import a dependency and log its version if it has one"""
    module = importlib.import_module(module_name)
    version = getattr(module, "__version__", "unknown")
    logger.info(f"{module_name} imported successfully (version: {version})")


@pytest.mark.parametrize("module_name", package_modules)
def test_package_imports(module_name):
    importlib.import_module(module_name)


def test_pydantic_major_version():
    import pydantic

    assert pydantic.VERSION.startswith("1."), f"pydantic {pydantic.VERSION}: the schemas use the v1 API"


def test_numpy_compatibility():
    import numpy as np

    logger.info(f"Python {sys.version.split()[0]}, NumPy {np.__version__}")
    windows = np.lib.stride_tricks.sliding_window_view(np.zeros((30, 30, 3)), (27, 27), axis=(0, 1))
    assert windows.shape == (4, 4, 3, 27, 27)
