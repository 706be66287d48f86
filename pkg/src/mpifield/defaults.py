"""Package-wide default hyperparameters and dimensions.

Values with an architectural meaning (plane count, latent sizes) live
here so the CLI, trainers, and asset formats agree on them.
"""

PLANE_COUNT = 64          # depth planes, uniform in disparity
FEATURE_DIM = 8           # latent feature channels per MPI voxel
APPEARANCE_DIM = 16       # appearance vector length

# stage 1 (base color + alpha optimization)
PHASE_A_ITERS = 2000
PHASE_B_ITERS = 2000
LR_ALPHA = 1e-2
LR_JOINT = 1e-3
GRAD_LOSS_WEIGHT = 1.0
N_SCALES = 4
CROP = 256

# stage 2 (appearance training)
STAGE2_ITERS = 5000
STAGE2_LR = 1e-3
STYLE_WEIGHT = 0.5
GAN_WEIGHT = 0.0          # discriminator not shipped; see README

# dataset
TRAIN_FRACTION = 0.85
NEAR_PERCENTILE = 2.0
FAR_PERCENTILE = 98.0

# viewer export
BUNDLE_SLICES = 16
