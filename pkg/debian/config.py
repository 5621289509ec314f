# srb-gradient Configuration File
# This file can be installed to /etc/srb-gradient/config.py, or passed with --config
# Command-line flags override every value here

# Map selection
MAP = "baker2d"
PARAMS = [0.0, 0.4, 0.0, 0.0]   # s1..s4 for baker2d; s1..s3 for baker3d; s for sawtooth; gamma for onion

# Trajectory
RUN = {
    'x0': "random",              # or a coordinate list
    'm': "auto",                 # unstable dimension; "auto" runs Benettin first
    'n_steps': 100_000,
    'burn_in': 200,
    'seed': 0,
    'seed2': 1,                  # second tangent seed for `convergence`
    'le_steps': 10_000,
    'gap_tol': 0.05,             # nats/step
}

# Histograms and the finite-difference overlay
HISTOGRAM = {
    'bins': [256, 256],
    'rows': [],                  # e.g. [36, 72, 108, 144, 180] for the density-gradient overlay
    'trajectories': 1,
}

# Integration by parts
MC = {
    'observable': "sin_exp_2d",
    'seeds': 8,
    'sweep': [],                 # e.g. [10_000, 100_000, 1_000_000]
}

HYPERBOLICITY = {
    'window': 60,                # look-ahead steps for the stable subspace
}

# 1-D maps
APPENDIX = {
    'k_bins': 2048,
    'reference_steps': 10_000_000,
    'probes': [0.4, 0.6],
}

LOGGING = {
    'log_dir': None,             # e.g. "/var/log/srb-gradient"
    'progress_every': 1_000_000,
}
