"""Regression random forest: CART trees, bagging, prediction, binary format."""

from .io import FORMAT_VERSION, deserialize, load_model, save_model, serialize
from .model import (
    ForestModel,
    HyperParams,
    Tree,
    fit_forest,
    fit_forest_arrays,
    fit_tree,
    predict,
    predict_tree,
)

__all__ = [
    "FORMAT_VERSION",
    "ForestModel",
    "HyperParams",
    "Tree",
    "deserialize",
    "fit_forest",
    "fit_forest_arrays",
    "fit_tree",
    "load_model",
    "predict",
    "predict_tree",
    "save_model",
    "serialize",
]
