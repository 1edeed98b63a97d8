"""Planar pick-and-place benchmark."""

from .dataset import Demonstration, read_dataset, write_dataset
from .scene import Pose, Scene, SceneObject, Workspace, render_depth, rotate_scene
from .tasks import TASKS, TaskError, TaskSpec, observe, oracle, reset, rollout, step, success, task

__all__ = ["Demonstration", "read_dataset", "write_dataset", "Pose", "Scene", "SceneObject",
           "Workspace", "render_depth", "rotate_scene", "TASKS", "TaskError", "TaskSpec", "observe",
           "oracle", "reset", "rollout", "step", "success", "task"]
