"""
8-connected components of binary masks, shared by the lesion-wise F1
and the detection evaluation
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple
import numpy as np
from scipy import ndimage
from core.grids import AnomalyMap, BinaryMask

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class Component:
    """
    Maximal 8-connected set of mask pixels, as (x, y) = (column, row)
    pairs in row-major order. The confidence is the highest anomaly
    score among the members
    """
    pixels: Tuple[Tuple[int, int], ...]
    confidence: float = 0.0

    @property
    def area(self) -> int:
        """
        Number of member pixels
        """
        return len(self.pixels)

    def coordinates(self) -> np.ndarray:
        """
        (area, 2) float array of member (x, y) pixel centres
        """
        return np.asarray(self.pixels, dtype=np.float64).reshape(-1, 2)


def label_components(mask: np.ndarray) -> Tuple[np.ndarray, int]:
    """
    Labels the 8-connected components of a boolean array. Labels are
    numbered by the row-major index of each component's first pixel

    Args:
        mask (np.ndarray): boolean (height, width) array

    Returns:
        labels (np.ndarray): int array, 0 for background
        count (int): number of components
    """
    labels, count = ndimage.label(np.asarray(mask, dtype=bool), structure=EIGHT_CONNECTED)
    return labels, int(count)


def connected_components(mask: BinaryMask,
                         score_map: Optional[AnomalyMap] = None) -> List[Component]:
    """
    Partitions the mask pixels into 8-connected components ordered by
    their smallest row-major index, each scored with the maximum of
    the anomaly map over its pixels

    Args:
        mask (BinaryMask): binarised map or ground truth
        score_map (Optional[AnomalyMap]): scores, confidences are 0
            when missing

    Returns:
        (List[Component]): components
    """
    if score_map is not None:
        mask.check_geometry(score_map)
    labels, count = label_components(mask.pixels)
    components = []
    for label in range(1, count + 1):
        rows, cols = np.nonzero(labels == label)
        confidence = float(score_map.scores[rows, cols].max()) if score_map is not None else 0.0
        components.append(Component(pixels=tuple(zip(cols.tolist(), rows.tolist())),
                                    confidence=confidence))
    return components
