"""
Script called to check, over three seeds, whether the clean-trained
variant scores at least as high as the contaminated one on the
non-lesional FROC score at the calibrated threshold
"""

import sys
from pathlib import Path
from evaluation.detection import LabelFilter
from flowlens.experiment import ExperimentConfig, ExperimentReport, reference_score, run_experiment
from utils.load_config import load_config
from utils.logging_config import setup_logging

config = load_config()
SEEDS = (1, 2, 3)


def nonlesional_score(report: ExperimentReport, variant: str) -> float:
    """
    Non-lesional FROC score of a variant at its calibrated threshold,
    the lowest configured one when calibration is off

    Args:
        report (ExperimentReport): finished run
        variant (str): variant name

    Returns:
        (float): FROC score, 0 when the filter excluded every subject
    """
    return reference_score(report.variants[variant].summary, LabelFilter.NON_LESIONAL)


def print_seed_result(seed: int, clean: float, contaminated: float) -> None:
    """
    Helper function to print one seed's comparison

    Args:
        seed (int): dataset seed
        clean (float): clean-trained score
        contaminated (float): contaminated-trained score

    Returns:
        None
    """
    verdict = "ok" if clean >= contaminated else "reversed"
    print(f"seed {seed}: clean {clean:.3f} vs contaminated {contaminated:.3f} ({verdict})")


if __name__ == "__main__":
    setup_logging(config.get("logging_level", "info"))
    base = ExperimentConfig.model_validate(config.get("experiment", {}))
    names = [v.name for v in base.variants]
    wins = 0
    for seed in SEEDS:
        run_config = base.model_copy(update={
            "out_dir": str(Path(base.out_dir) / f"seed_{seed}"),
            "dataset": base.dataset.model_copy(update={"seed": seed}),
        })
        result = run_experiment(run_config)
        clean, contaminated = (nonlesional_score(result, names[0]),
                               nonlesional_score(result, names[1]))
        print_seed_result(seed, clean, contaminated)
        wins += clean >= contaminated
    print(f"{wins}/{len(SEEDS)} seeds favour the clean-trained variant")
    sys.exit(0 if wins >= 2 else 1)
