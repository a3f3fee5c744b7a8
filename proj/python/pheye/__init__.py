"""Cost model, verification sweep and analysis helpers backed by the C++ core."""

import json
from fractions import Fraction

try:
    from . import _pheye
except ImportError:  # in-tree: the extension sits in the build directory
    import _pheye

PheyeError = _pheye.PheyeError
DimensionError = _pheye.DimensionError
NumericError = _pheye.NumericError
InputError = _pheye.InputError
ConfigError = _pheye.ConfigError
ContractError = _pheye.ContractError
TrainingError = _pheye.TrainingError

string_similarity = _pheye.string_similarity
matching_characters = _pheye.matching_characters
relative_area = _pheye.relative_area
relative_change = _pheye.relative_change
format_delta = _pheye.format_delta
tertile_partition = _pheye.tertile_partition
tertile_table = _pheye.tertile_table
attention_csv = _pheye.attention_csv
token_counts = _pheye.token_counts
parse_model_config = _pheye.parse_model_config


def vit_cost(n, d):
    return int(_pheye.vit_cost(n, d))


def pheye_vit_cost(n_prime, d, p):
    return int(_pheye.pheye_vit_cost(n_prime, d, p))


def llava_lm_cost(n_t, n_i, d):
    return int(_pheye.llava_lm_cost(n_t, n_i, d))


def pheye_lm_cost(n_t, n_i, d, d_vit, interval):
    num, den = _pheye.pheye_lm_cost(n_t, n_i, d, d_vit, interval)
    return Fraction(int(num), int(den))


def cost_report(**inputs):
    return json.loads(_pheye.cost_report_json(**inputs))


def verify(accounting="formula"):
    return json.loads(_pheye.verify_json(accounting))
