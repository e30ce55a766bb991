from crossnet.network.crossview import (AerialNet, ConditioningNet, CrossViewModel, NaiveTransform,
                                        TransformNet, apply_transform, coordinate_features,
                                        load_model, normalize_indices, save_model)

__all__ = ["AerialNet", "ConditioningNet", "CrossViewModel", "NaiveTransform", "TransformNet",
           "apply_transform", "coordinate_features", "load_model", "normalize_indices", "save_model"]
