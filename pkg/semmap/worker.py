""" Worker class to handle per-frame tasks such as rendering, refinement or fusion."""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Sequence

from .labelFusion import ObjectMask, fuse
from .localization import RefineOptions, refinePose
from .renderer import render


class Worker:
    """ Worker class to handle one frame of a pipeline stage.
    Attention: this class is recreated for each work request, there is no persistence.
    """

    def __init__(self, workType: str, objects: dict[str, Any]) -> None:
        """ Initialize the Worker with the type of work and necessary objects.
        Args:
            workType (str): The type of work to be performed (e.g., 'render', 'refine', 'fuse').
            objects (dict): A dictionary containing the necessary objects for the work, such as
                cloud, pose, camera and splat configuration.
        """
        self.workType = workType
        self.objects = objects
        self.frameId = self.objects.get('frameId', '')

    def run(self) -> Any:
        """ Run the worker based on the specified work type. """
        handler = {
            'render': self._runRender,
            'refine': self._runRefine,
            'fuse': self._runFuse,
        }.get(self.workType)
        if handler is None:
            raise ValueError(f"Unknown work type '{self.workType}'")
        return handler()

    def _runRender(self) -> Any:
        objects = self.objects
        return render(objects['cloud'], objects['pose'], objects['cam'], objects['splat'])

    def _runRefine(self) -> Any:
        """ Render the ground truth at loss resolution, then refine the coarse pose against it """
        objects = self.objects
        lossCam = objects['lossCam']
        gtRender = render(objects['cloud'], objects['gtPose'], lossCam, objects['splat'])
        options: RefineOptions = objects['options']
        refined = refinePose(objects['coarse'], objects['gtPose'], (gtRender[1], gtRender[0]), lossCam,
                             objects['weights'], options)
        logging.debug('Refined %s', self.frameId)
        return refined

    def _runFuse(self) -> Any:
        """ Fuse the rendering at one pose with background labels and object masks """
        objects = self.objects
        rendered, _ = render(objects['cloud'], objects['pose'], objects['cam'], objects['splat'])
        masks: list[ObjectMask] = objects['masks']
        return fuse(rendered, objects['background'], masks, objects['registry'], objects['threshold'])


def runFrames(workType: str, jobs: Sequence[dict[str, Any]], threads: int = 1) -> list[Any]:
    """ Run one worker per job on a thread pool; results come back in job order.
    Args:
        workType (str): The type of work of every job
        jobs (list): objects of every job
        threads (int): pool size; 1 runs in the calling thread
    Returns:
        list: results in job order
    """
    if threads <= 1:
        return [Worker(workType, job).run() for job in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda job: Worker(workType, job).run(), jobs))
