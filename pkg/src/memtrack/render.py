"""Binary PPM (P6) frame strips of a run over its ground truth."""
import logging
from pathlib import Path
from typing import List, Union

import numpy as np

from .errors import FrameRangeMismatch, RecordIOError
from .raster import PixelGrid, boundary
from .scenario import GroundTruth, TruthFrame
from .tracker import FrameResult, RunRecord

logger = logging.getLogger(__name__)

PALETTE = np.array([
    (31, 119, 180), (255, 127, 14), (44, 160, 44), (214, 39, 40),
    (148, 103, 189), (140, 86, 75), (227, 119, 194), (127, 127, 127),
    (188, 189, 34), (23, 190, 207), (255, 187, 120), (152, 223, 138),
], dtype=np.uint8)
BACKGROUND = np.array((16, 16, 16), dtype=np.uint8)
OUTLINE = np.array((255, 255, 255), dtype=np.uint8)


def render_frame(result: FrameResult, truth: TruthFrame, grid: PixelGrid) -> bytes:
    """Predictions as filled discs coloured by track id, ground truth as outlines."""
    image = np.empty(grid.shape + (3,), dtype=np.uint8)
    image[...] = BACKGROUND
    for output in sorted(result.outputs, key=lambda output: output.track_id):
        if not output.mask.blank:
            image[grid.disc(output.mask)] = PALETTE[output.track_id % len(PALETTE)]
    for state in truth.identities:
        if not state.mask.blank:
            image[boundary(grid.disc(state.mask))] = OUTLINE
    header = f"P6\n{grid.columns} {grid.rows}\n255\n".encode("ascii")
    return header + image.tobytes()


def render_run(
    run: RunRecord, truth: GroundTruth, outdir: Union[str, Path], resolution: int = 256
) -> List[Path]:
    grid = PixelGrid(truth.width, truth.height, resolution)
    if [frame.t for frame in run.frames] != [frame.t for frame in truth.frames]:
        raise FrameRangeMismatch(run.frames, truth.frames)
    outdir = Path(outdir)
    written = []
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        for result, truth_frame in zip(run.frames, truth.frames):
            path = outdir / f"frame_{result.t:04d}.ppm"
            path.write_bytes(render_frame(result, truth_frame, grid))
            written.append(path)
    except OSError as exc:
        raise RecordIOError(outdir, str(exc)) from exc
    logger.info({"event": "render_complete", "outdir": str(outdir), "frames": len(written)})
    return written
