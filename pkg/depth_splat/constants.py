# Projection
DILATION_FLOOR_PX2 = 0.3  # added to both diagonals of the 2D covariance before inversion
SUPPORT_SIGMAS = 3  # support radius, in standard deviations of the larger 2D eigenvalue
DEFAULT_Z_NEAR = 0.01  # world units

# Compositing
ALPHA_MAX = 0.99
MIN_ALPHA = 1 / 255
MIN_TRANSMITTANCE = 1e-4
DEFAULT_TILE_SIZE_PX = 16

# Initialization
INITIAL_OPACITY = 0.1
SH_C0 = 0.28209479177387814  # Y_00

# Depth regularization
HARD_DEPTH_TAU = 0.95
LOCAL_TERM_WEIGHT_GAMMA = 0.1
L2_TOLERANCE_DELTA = 0.05  # normalized depth units
DSSIM_WEIGHT_LAMBDA = 0.2
# Normalization epsilon = EPSILON_STD_FRACTION * std(whole depth map) + EPSILON_FLOOR
EPSILON_STD_FRACTION = 1e-2
EPSILON_FLOOR = 1e-8
PATCH_SIZE_RANGE_PX = (5, 17)

# SSIM
SSIM_WINDOW_SIGMA = 1.5
SSIM_WINDOW_RADIUS = 5  # 11x11 window
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_DATA_RANGE = 1.0

# Schedule
TOTAL_ITERS = 6000
SOFT_START_ITER = 1000

# Learning rates, per parameter group
CENTER_LR_INIT = 1.6e-4
CENTER_LR_FINAL = 1.6e-6
SCALE_LR = 5e-3
ROTATION_LR = 1e-3
OPACITY_LR = 5e-2
SH_LR = 2.5e-3
NEURAL_LR = 1e-3  # hash tables and MLP weights
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-15

# Densification
DENSIFY_INTERVAL = 100
DENSIFY_START_ITER = 500
DENSIFY_STOP_ITER = 4500
DENSIFY_GRAD_THRESHOLD = 2e-4
PRUNE_OPACITY = 5e-3
SPLIT_SCALE_DIVISOR = 1.6
# Primitives whose largest scale is below this fraction of the scene extent are cloned rather than split
CLONE_EXTENT_FRACTION = 0.01

# Neural color renderer
HASH_LEVELS = 16
HASH_BASE_RESOLUTION = 16
HASH_MAX_RESOLUTION = 512
HASH_TABLE_SIZE_LOG2 = 19
HASH_FEATURES_PER_LEVEL = 2
MLP_WIDTH = 64
MLP_STAGE_A_LAYERS = 3
MLP_STAGE_B_LAYERS = 2
DIRECTION_SH_DEGREE = 4
ENCODER_BOX_PADDING = 0.1

# Evaluation
PSNR_CAP_DB = 99.0
DEPTH_METRIC_MIN_ACCUM_ALPHA = 0.5
