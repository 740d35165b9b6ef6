"""Centromere inference from trans-contact maps by simulation-based inference."""

from .genome import (
    BlockRow,
    Chromosome,
    ContactMap,
    GenomeSpec,
    builtin_genome,
    load_genome,
    save_genome,
)
from .pipeline import (
    ConfigError,
    StageError,
    evaluate_run,
    export_density,
    load_config,
    round_report,
    run_experiment,
)
from .rng import make_rng
from .summary import (
    build_joint_net,
    build_shared_net,
    load_summary_net,
    save_summary_net,
    train_summary,
)

__version__ = "0.1.0"

__all__ = [
    "BlockRow",
    "Chromosome",
    "ContactMap",
    "GenomeSpec",
    "builtin_genome",
    "load_genome",
    "save_genome",
    "make_rng",
    "ConfigError",
    "StageError",
    "load_config",
    "run_experiment",
    "evaluate_run",
    "export_density",
    "round_report",
    "build_joint_net",
    "build_shared_net",
    "train_summary",
    "save_summary_net",
    "load_summary_net",
    "__version__",
]
