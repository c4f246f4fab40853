"""Compositional dynamic scenes: Gaussian objects, trajectories, and score distillation."""

from .compose import RenderMode, render_frame, render_scene
from .deformation import DeformationNet, deform
from .orientation import rotation_between
from .regularizers import RegWeights, acceleration_loss, contact_loss, rigidity_loss, total_regularization
from .scene import Camera, Gaussian3D, GaussianObject, Scene, build_knn, make_object, orbit_camera
from .trajectory import Trajectory, check_and_truncate

__version__ = "0.1.0"

__all__ = [
    "Camera",
    "DeformationNet",
    "Gaussian3D",
    "GaussianObject",
    "RegWeights",
    "RenderMode",
    "Scene",
    "Trajectory",
    "acceleration_loss",
    "build_knn",
    "check_and_truncate",
    "contact_loss",
    "deform",
    "make_object",
    "orbit_camera",
    "render_frame",
    "render_scene",
    "rigidity_loss",
    "rotation_between",
    "total_regularization",
]
