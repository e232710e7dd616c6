SPEC_VERSION = 1
RNG_VERSION = "philox-numpy-v1"
SIMULATION_OUTCOME_VARIANT = "spec_v1"

# Treatment grid used by interest sets and discretized treatments
TREATMENT_GRID_STEP = 0.1
MAX_INTEREST_POINTS = 64

CME_LAMBDA = 0.01
CME_SMOOTHING_FRACTION = 0.1

GP_ITERATIONS = 500
GP_STEP = 0.05
GP_LOG_LENGTHSCALE_BOUNDS = (-6.907755278982137, 6.907755278982137)  # [1e-3, 1e3]
GP_LOG_NOISE_FLOOR = -13.815510557964274  # 1e-6

OUTCOME_NOISE_SD = 0.4

BASE_STRATEGIES = (
    "random",
    "pool_variance",
    "mu_bald",
    "coreset",
    "ig_cme",
    "tvr_cme",
    "ig_mc",
    "tvr_mc",
)
GREEDY_SUFFIX = "_g"
SOFTMAX_SUFFIX = "_s"

TRIAL_COLUMNS = [
    "strategy",
    "cq_kind",
    "seed",
    "round",
    "labeled",
    "sqrt_amse",
    "trace_q",
    "logdet_q",
    "wall_time_s",
    "aborted",
]
AGGREGATE_COLUMNS = [
    "strategy",
    "round",
    "labeled",
    "mean_sqrt_amse",
    "se_sqrt_amse",
    "n_trials",
]

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_PARTIAL = 4

TRIALS_FILE = "trials.csv"
AGGREGATE_FILE = "aggregate.csv"
EFFECTIVE_CONFIG_FILE = "effective_config.json"
