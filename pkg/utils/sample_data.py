"""
Sample configurations and covariate files

Small documents used by the tests, the README and ``run.sh``. The run
configurations are sized to finish in seconds.
"""
import copy
import json
from pathlib import Path
from typing import Union

# Minimal run document: everything else takes its default
MINIMAL_CONFIG = {"cq_kind": "cate", "generator": "visualization"}

# Desk-scale CATE run on the visualization generator
SMALL_RUN_CONFIG = {
    "spec_version": 1,
    "cq_kind": "cate",
    "generator": {"generator": "visualization", "n": 60},
    "warm_start": 10,
    "batch_size": 5,
    "budget": 20,
    "strategies": ["random", "tvr_cme"],
    "seeds": [0, 1],
    "gp": {"iterations": 10, "refit_iterations": 2},
    "oracle_mc_n": 2000,
}

# Covariate file with one continuous column playing birth weight, one more
# continuous column and one binary flag
SAMPLE_COVARIATES_CSV = (
    "c_bw,c_age,b_flag\n"
    "0.12,-0.40,1\n"
    "-0.85,0.33,0\n"
    "1.02,0.90,1\n"
    "0.45,-1.20,0\n"
    "-0.30,0.05,1\n"
    "0.77,-0.61,0\n"
    "-1.10,1.40,1\n"
    "0.05,-0.02,0\n"
    "0.60,0.71,1\n"
    "-0.52,-0.88,0\n"
)

# Test cases with validation issues
INVALID_COVARIATES = {
    "non_numeric": "c_bw,b_flag\n0.1,1\nabc,0\n",
    "binary_out_of_range": "c_bw,b_flag\n0.1,1\n0.2,2\n",
    "header_only": "c_bw,b_flag\n",
    "empty": "",
}

INVALID_CONFIGS = {
    "unknown_key": {**MINIMAL_CONFIG, "foo": 1},
    "budget_not_divisible": {**MINIMAL_CONFIG, "budget": 7, "batch_size": 5},
    "unknown_strategy": {**MINIMAL_CONFIG, "strategies": ["tvr_magic"]},
    "future_version": {**MINIMAL_CONFIG, "spec_version": 2},
    "semisynthetic_without_covariates": {"cq_kind": "ate", "generator": {"generator": "semisynthetic"}},
    "visualization_ateds": {"cq_kind": "ateds", "generator": {"generator": "visualization"}},
}


def create_small_run_config(**overrides) -> dict:
    """Copy of ``SMALL_RUN_CONFIG`` with top-level keys replaced"""
    config = copy.deepcopy(SMALL_RUN_CONFIG)
    config.update(overrides)
    return config


def write_config(config: dict, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config, indent=2), encoding="utf-8")
    return path


def write_covariates(path: Union[str, Path], text: str = SAMPLE_COVARIATES_CSV) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


if __name__ == "__main__":
    print(json.dumps(SMALL_RUN_CONFIG, indent=2))
