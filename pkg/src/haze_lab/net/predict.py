from __future__ import annotations

import numpy as np

from ..dcp import DcpParams, estimate_airlight, recover_radiance
from ..image import as_rgb
from .model import CanModel, predict_transmission


def transmission_for(model, img: np.ndarray) -> np.ndarray:
    if isinstance(model, CanModel):
        return predict_transmission(model, img)
    return np.asarray(model(img), dtype=np.float64)


def predict_and_dehaze(model, img, dcp: DcpParams = DcpParams()) -> np.ndarray:
    """Predicted transmission, estimated airlight, then clamped inversion of the haze model.

    The result is not clamped to [0, 1].
    """
    img = as_rgb(img)
    t = transmission_for(model, img)
    a = estimate_airlight(img, dcp.patch)
    return recover_radiance(img, t, a, dcp.t0)
