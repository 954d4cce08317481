"""Named constants for experiment budgets and pass/fail gates.

Values are chosen so qualitative trends become assertable at desk scale;
each one is pinned here rather than tuned inside tests.
"""

# shifted-input noise for the m_s reference scale
SHIFT_SIGMA = 1 / 20
# output-noise width for the conditioning probe
PROBE_SIGMA_OUT = 1 / 1000

# initial input distribution
INIT_MU = 0.7
INIT_SIGMA = 1 / 20

# blur schedule endpoints (pixels)
BLUR_START = 2.4
BLUR_END = 0.4

# iterations ignored before trend/correlation checks (start-up transient)
WARMUP = 10
# m_g must fall at least this many times below its starting value
MG_DROP_FACTOR = 100.0
# undercomplete runs must keep m_i above this fraction of its start
MI_FLOOR_FRACTION = 0.2

# log-uniform range for the random epsilon search
EPS_SEARCH_LO = 1e-5
EPS_SEARCH_HI = 1.0

# random epsilon search: candidates per search and iterations per candidate
SEARCH_CANDIDATES = 8
SEARCH_ITERS = 300

# overcomplete convergence check: budget F, then 4F; final m_i must fall
# below this fraction of |a|
CONVERGE_ITERS = 2000
CONVERGE_FRACTION = 0.01

# width and depth sweeps share one iteration budget
SWEEP_ITERS = 2000

# undercomplete non-uniqueness run on the pooled fixture; large steps let the
# input wander along directions the pooling cannot see
NONUNIQUE_EPS = 0.1
NONUNIQUE_ITERS = 2000

# the same check on the noise-trained convnet; ReLU dead zones cap how far m_g
# falls, so steps are small and the run is longer
TRAINED_NONUNIQUE_EPS = 0.002
TRAINED_NONUNIQUE_ITERS = 4000

# memorization of 200 noise items / 10 classes
MEMORIZE_HIDDEN = 64
MEMORIZE_LR = 0.05
MEMORIZE_BATCH = 20
MEMORIZE_EPOCHS = 40

# residual convnet trained on the same noise
CONVNET_CHANNELS = (8, 16, 32)
CONVNET_LR = 0.02
CONVNET_EPOCHS = 30

# exact inversion round trip (64-bit) and conditioning probe gate
ROUNDTRIP_RTOL = 1e-6
PROBE_RATIO_GATE = 1e3

# structured-data convnet budget, found by pilot run (reaches 1.0 at epoch 6)
STRUCTURED_CHANNELS = (8, 16)
STRUCTURED_LR = 0.05
STRUCTURED_EPOCHS = 10
STRUCTURED_ACCURACY = 0.95
