from .boxes import (Box3D, BoxArrays, Scene, boxes_to_arrays,
                    default_category_table, load_scene, save_scene,
                    scene_from_dict, scene_to_dict)
from .kernels import BACKEND, available_backends
from .ops import (axis_gap, center_distance, iou_3d, nms_3d,
                  projected_overlap_ratio)

__all__ = [
    "Box3D", "BoxArrays", "Scene", "boxes_to_arrays",
    "default_category_table", "load_scene", "save_scene", "scene_from_dict",
    "scene_to_dict", "BACKEND", "available_backends", "axis_gap",
    "center_distance", "iou_3d", "nms_3d", "projected_overlap_ratio",
]
