import numpy as np
import pytest

from wsi_pipeline.raster import ImageBuffer
from wsi_pipeline.tiler import Patch


def make_image(array) -> ImageBuffer:
    arr = np.asarray(array, dtype=np.uint8)
    if arr.ndim == 2:
        arr = arr[:, :, np.newaxis]
    return ImageBuffer(arr)


def make_patch(array, label=None, slide_id="s", origin=(0, 0)) -> Patch:
    return Patch(
        pixels=make_image(array),
        slide_id=slide_id,
        roi_id=None,
        label=label,
        origin_px=origin,
        origin_nm=(0, 0),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
