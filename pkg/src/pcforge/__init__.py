"""pcforge: single-aerial-image 3D building point cloud reconstruction.

Dataset forging (masks, Sobel edge maps, sampled clouds, recovered camera
translations), a projection-conditioned point cloud diffusion model with
plain and zero-mean sampling modes, and Chamfer/F-Score evaluation.
"""

from .camera import (BoundingBox2D, CameraPose, DepthMap, Intrinsics,
                     bbox_of_mask, project_points, rasterize_points,
                     rasterize_polygon_mask)
from .conditioning import FeatureImage, build_condition_image, project_features
from .dataset import (BuildingRecord, DatasetSample, GenerationConfig,
                      generate_dataset, generate_sample, load_geometry_dir,
                      make_synthetic_buildings, parse_building_geometry,
                      split_dataset)
from .denoiser import (AdamW, DivergenceError, ToyPointwiseDenoiser,
                       TrainConfig, TrainingExample, load_checkpoint,
                       loss_and_grads, sample_pointcloud, save_checkpoint,
                       time_embedding, train_step)
from .diffusion import (CDPM, DDPM, NoiseSchedule, center_noise,
                        forward_sample, make_schedule, reverse_step,
                        training_loss)
from .edges import masked_sobel, sobel
from .geometry import (TriangleMesh, UnitSphereTransform, center_cloud,
                       normalize_unit_sphere, sample_mesh)
from .metrics import (KdTree3, MetricReport, chamfer, fscore,
                      nearest_distance_all, nearest_distance_brute)
from .posefit import (PoseFitReport, bbox_iou, center_mask_foreground, cost_x,
                      cost_y, cost_z, line_minimize,
                      optimize_camera_translation)

__version__ = "0.1.0"
