"""Image-space color feature grids for lifting onto points.

The toy stand-in for a large image encoder: per pixel, the flattened RGB
neighborhood at one or more dilations. Deterministic and local, which is
all the fusion stage needs from a color descriptor.
"""

import numpy as np

from .base import check_array


def patch_feature_map(image, radius=1, dilations=(1, 3)):
    """(H, W, 3) image -> (H, W, d) feature grid.

    d = 3 * (2*radius+1)^2 * len(dilations); edges clamp.
    """
    image = check_array(image, "image", shape=(None, None, 3))
    h, w = image.shape[:2]
    planes = []
    for dil in dilations:
        for dv in range(-radius, radius + 1):
            for du in range(-radius, radius + 1):
                vs = np.clip(np.arange(h) + dv * dil, 0, h - 1)
                us = np.clip(np.arange(w) + du * dil, 0, w - 1)
                planes.append(image[vs][:, us])
    return np.concatenate(planes, axis=2)
