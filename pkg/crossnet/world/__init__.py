from crossnet.world.dataset import (PairDataset, load_dataset, make_dataset, make_pair,
                                    make_permutation_task)
from crossnet.world.render import ground_classes, rasterize, render_aerial, render_ground
from crossnet.world.scene import generate_scene, is_asymmetric

__all__ = ["PairDataset", "load_dataset", "make_dataset", "make_pair", "make_permutation_task",
           "ground_classes", "rasterize", "render_aerial", "render_ground", "generate_scene",
           "is_asymmetric"]
