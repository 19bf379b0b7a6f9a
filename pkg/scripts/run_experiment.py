"""
Script called to run the experiment described by the `experiment`
block of the configuration file
"""

from flowlens.experiment import ExperimentConfig, run_experiment
from utils.load_config import load_config
from utils.logging_config import setup_logging

config = load_config()

if __name__ == "__main__":
    setup_logging(config.get("logging_level", "info"))
    run_experiment(ExperimentConfig.model_validate(config.get("experiment", {})))
