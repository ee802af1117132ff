"""RRT* with learned steering: HMM and GRU models bias where the tree grows."""
from .env import Environment, OccupancyMap, gen_bugtrap, gen_narrow_passage, gen_roundabout, load_env, save_env
from .hmm import HmmModel, em_fit
from .neural import ArchConfig, RecurrentSteeringModel
from .planner import PlannerConfig, PlanResult, plan, plan_joint, replan_loop
from .training import CollectConfig, OptimConfig, collect_traces, load_model, save_model, train_hmm, train_recurrent

__version__ = "0.1.0"

__all__ = [
    "ArchConfig",
    "CollectConfig",
    "Environment",
    "HmmModel",
    "OccupancyMap",
    "OptimConfig",
    "PlanResult",
    "PlannerConfig",
    "RecurrentSteeringModel",
    "collect_traces",
    "em_fit",
    "gen_bugtrap",
    "gen_narrow_passage",
    "gen_roundabout",
    "load_env",
    "load_model",
    "plan",
    "plan_joint",
    "replan_loop",
    "save_env",
    "save_model",
    "train_hmm",
    "train_recurrent",
]
