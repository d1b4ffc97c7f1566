"""Plug-in nuisance learners."""

from .gbt import GBTModel, GBTSpec, fit_gbt
from .lasso import L1Model, fit_lasso, lasso_cv
from .linear import OLSFit, SingularDesignError, fit_ols
from .tree import RegressionTree, ScaleModel, fit_tree, fit_variance_tree

__all__ = [
    "GBTModel", "GBTSpec", "fit_gbt",
    "L1Model", "fit_lasso", "lasso_cv",
    "OLSFit", "SingularDesignError", "fit_ols",
    "RegressionTree", "ScaleModel", "fit_tree", "fit_variance_tree",
]
