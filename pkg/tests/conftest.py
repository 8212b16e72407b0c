import numpy as np
import pytest

from aerialclr.synth import SynthConfig, synth_generate
from aerialclr.tiling import BoundingBox, SourceFrame


@pytest.fixture(scope="session")
def small_frames():
    """A couple dozen small synthetic frames shared across read-only tests."""
    cfg = SynthConfig(n_frames=24, frame_w=256, frame_h=256,
                      animals_per_frame=1.5, trees_per_frame=3.0)
    return synth_generate(cfg, seed=123)


@pytest.fixture
def flat_frame():
    """One constant-valued frame with two annotation boxes."""
    pixels = np.full((200, 300, 3), 90, dtype=np.uint8)
    boxes = [BoundingBox(x=40, y=50, w=12, h=9), BoundingBox(x=200, y=120, w=8, h=14)]
    return SourceFrame(frame_id="flat", width=300, height=200,
                       pixel_data=pixels, annotations=boxes)
