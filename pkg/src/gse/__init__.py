"""
Tangent bundle manifold learning with Grassmann and Stiefel eigenmaps.

Fit a model on a sample from a q-dimensional manifold in R^p, then embed
points to R^q, reconstruct them back to R^p and read off tangent spaces::

    from gse import GseModel, HyperParams
    model = GseModel.fit(X, HyperParams(q=2, variant="ogse"))
    y = model.embed(x)
    x_star = model.reconstruct(y)
    G = model.jacobian_G(y)
"""

from gse.errors import *  # noqa: F401,F403
from gse.evaluation import (
    EvalReport,
    evaluate,
    local_max_error,
    project_to_manifold,
    reconstruction_error,
    tangent_error,
)
from gse.geometry import (
    Subspace,
    binet_cauchy_distance,
    binet_cauchy_kernel,
    orthonormalize_svd,
    principal_angles,
    projection_2norm_distance,
    projector,
)
from gse.manifolds import PointCloud, SyntheticManifold, get_manifold
from gse.model import GseModel
from gse.neighborhoods import HyperParams
from gse.storage import load_model, save_model

__version__ = "0.1.0"
