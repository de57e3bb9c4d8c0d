"""
Constants and default values
"""

# Euler convention used by RRE; echoed into every evaluation report
EULER_CONVENTION = "intrinsic-XYZ"

# Geometry tolerances
ORTHONORMAL_TOL = 1e-9
POSE_FILE_ORTHONORMAL_TOL = 1e-6
QUATERNION_UNIT_TOL = 1e-6
GIMBAL_LOCK_TOL = 1e-9
COLLINEAR_TOL = 1e-9

# LRF
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 50
EIGEN_GAP_TOL = 1e-9
TANGENT_SUM_TOL = 1e-9
DEGENERATE_RETRIES = 10

# Network
QNET_FALLBACK_NORM = 1e-8
L2_EPS = 1e-12
DEFAULT_DESCRIPTOR_DIM = 32
BOTTLENECK_CHANNELS = 1024

# Indoor-scan defaults
DEFAULT_PATCH_RADIUS = 0.5
DEFAULT_M = 4000
DEFAULT_N_TRAIN = 512
DEFAULT_N_TEST = 1024
DEFAULT_ANCHORS = 350
POSITIVE_MARGIN = 0.1
NEGATIVE_MARGIN = 1.4
EXCLUSION_RADIUS_FACTOR = 0.2
AUGMENTATION_DEG = 10.0
LEARNING_RATE = 1e-1
LR_DECAY = 0.1
LR_DECAY_EVERY_EPOCHS = 3
WEIGHT_DECAY = 5e-5
DROPOUT = 0.3
MIN_OVERLAP = 0.30

# Evaluation
TAU_1 = 0.10
TAU_2 = 0.05
SUCCESS_RTE_MAX = 2.0
SUCCESS_RRE_MAX = 5.0
EVAL_POINTS = 5000

# RANSAC
RANSAC_MAX_ITERATIONS = 10000
RANSAC_CONFIDENCE = 0.99
RANSAC_THRESHOLD_INDOOR = 0.05
RANSAC_SAMPLE_SIZE = 3
RANSAC_DEGENERATE_BUDGET_FACTOR = 3

# File formats
CHECKPOINT_MAGIC = b"GEDI"
CHECKPOINT_VERSION = 1
DESCRIPTOR_MAGIC = b"GEDF"
DESCRIPTOR_VERSION = 1
DESCRIPTOR_NORM_TOL = 1e-4
POSE_FORMAT = "%.17g"

# Synthetic scenes
OVERLAP_ATTEMPTS = 100
OVERLAP_TOLERANCE = 0.1
