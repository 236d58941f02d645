"""PseudoLab Simulation - synthetic teacher, schedules and scene suites"""

from .runner import FixedSchedule, GmmSchedule, RunMetrics, compare_schedules, run_schedule
from .scenes import SceneConfig, aiou_sweep, make_scene, make_scene_suite
from .teacher import EmaState, TeacherSkill, WorldConfig, ema_update, teacher_emit

__all__ = [
    "FixedSchedule",
    "GmmSchedule",
    "RunMetrics",
    "compare_schedules",
    "run_schedule",
    "SceneConfig",
    "aiou_sweep",
    "make_scene",
    "make_scene_suite",
    "EmaState",
    "TeacherSkill",
    "WorldConfig",
    "ema_update",
    "teacher_emit",
]
