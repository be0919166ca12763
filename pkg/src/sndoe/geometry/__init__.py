"""Riemannian manifolds used by the stable vector fields."""

from .base import CutLocus, Manifold, PointOutsideChart
from .euclidean import Euclidean
from .points import (
    ManifoldPoint,
    TangentVector,
    chart,
    chart_inverse,
    distance,
    exp_map,
    inner,
    log_map,
    norm,
    project_tangent,
    pushforward,
    riemannian_grad,
)
from .product import Product
from .spd import Spd2
from .sphere import UnitQuaternion


def manifold_from_dict(spec):
    kind = spec["kind"]
    if kind == "euclidean":
        return Euclidean(int(spec["dim"]))
    if kind == "s3":
        return UnitQuaternion()
    if kind == "spd2":
        return Spd2()
    if kind == "product":
        return Product([manifold_from_dict(f) for f in spec["factors"]])
    raise ValueError(f"unknown manifold kind {kind!r}")


def parse_manifold(text):
    """Parse ``s3``, ``spd2``, ``r3`` / ``euclidean:3`` or ``x``-joined products."""
    parts = [p.strip() for p in text.lower().split("x")]
    factors = []
    for p in parts:
        if p in ("s3", "quat", "unitquaternion"):
            factors.append(UnitQuaternion())
        elif p in ("spd2", "spd"):
            factors.append(Spd2())
        elif p.startswith("euclidean:"):
            factors.append(Euclidean(int(p.split(":", 1)[1])))
        elif p.startswith("r") and p[1:].isdigit():
            factors.append(Euclidean(int(p[1:])))
        else:
            raise ValueError(f"unknown manifold {text!r}")
    return factors[0] if len(factors) == 1 else Product(factors)


__all__ = [
    "CutLocus",
    "Euclidean",
    "Manifold",
    "ManifoldPoint",
    "PointOutsideChart",
    "Product",
    "Spd2",
    "TangentVector",
    "UnitQuaternion",
    "chart",
    "chart_inverse",
    "distance",
    "exp_map",
    "inner",
    "log_map",
    "manifold_from_dict",
    "norm",
    "parse_manifold",
    "project_tangent",
    "pushforward",
    "riemannian_grad",
]
