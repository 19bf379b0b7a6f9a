"""
Simulated raters: noisy copies of the reference clicks, used to
exercise the dual-rater merge on generated data
"""

from typing import Dict, List, Mapping, Sequence
import numpy as np
from core.errors import ParameterError
from core.grids import PointAnnotation
from prepare_data.phantoms import make_rng

RATER_STREAM = 0x4A7E


def simulate_rater(points: Sequence[PointAnnotation],
                   jitter: float,
                   miss_rate: float,
                   seed: int,
                   rater: str,
                   width: int,
                   height: int) -> List[PointAnnotation]:
    """
    Drops every click with probability `miss_rate` and shifts the
    others by isotropic Gaussian noise, clamped to the image

    Args:
        points (Sequence[PointAnnotation]): reference clicks
        jitter (float): standard deviation of the shift in pixels
        miss_rate (float): probability of missing a click
        seed (int): seed of the rater stream
        rater (str): name written to the rater column
        width (int): image width
        height (int): image height

    Returns:
        (List[PointAnnotation]): the simulated rater's clicks
    """
    if jitter < 0:
        raise ParameterError("jitter cannot be negative")
    if not 0 <= miss_rate <= 1:
        raise ParameterError("miss_rate must lie in [0, 1]")
    rng = make_rng(seed, RATER_STREAM)
    clicks = []
    for point in points:
        missed = rng.uniform() < miss_rate
        dx, dy = rng.normal(0.0, jitter, size=2) if jitter > 0 else (0.0, 0.0)
        if missed:
            continue
        clicks.append(PointAnnotation(x=float(np.clip(point.x + dx, 0.0, width - 1.0)),
                                      y=float(np.clip(point.y + dy, 0.0, height - 1.0)),
                                      label=point.label, rater=rater,
                                      subject_id=point.subject_id))
    return clicks


def simulate_raters(annotations: Mapping[str, Sequence[PointAnnotation]],
                    sizes: Mapping[str, Sequence[int]],
                    seed: int,
                    jitter: float = 1.5,
                    miss_rate: float = 0.1,
                    names: Sequence[str] = ("rater_a", "rater_b")
                    ) -> Dict[str, Dict[str, List[PointAnnotation]]]:
    """
    Independent simulated raters over every annotated subject

    Args:
        annotations (Mapping[str, Sequence[PointAnnotation]]):
            reference clicks per subject id
        sizes (Mapping[str, Sequence[int]]): (width, height) per
            subject id
        seed (int): master seed
        jitter (float): standard deviation of the shift in pixels
        miss_rate (float): probability of missing a click
        names (Sequence[str]): rater names

    Returns:
        (Dict[str, Dict[str, List[PointAnnotation]]]): clicks per
            subject id, per rater name
    """
    result: Dict[str, Dict[str, List[PointAnnotation]]] = {name: {} for name in names}
    for r, name in enumerate(names):
        for s, (subject_id, points) in enumerate(annotations.items()):
            width, height = sizes[subject_id]
            tagged = [PointAnnotation(p.x, p.y, p.label, p.rater, subject_id) for p in points]
            result[name][subject_id] = simulate_rater(
                tagged, jitter, miss_rate, int(make_rng(seed, r, s).integers(2**63)),
                name, width, height)
    return result
