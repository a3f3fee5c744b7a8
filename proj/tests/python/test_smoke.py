import difflib
import json
import random
from fractions import Fraction

import pytest

import pheye


def test_headline_costs():
    assert pheye.vit_cost(2305, 1280) == 52118816000
    assert pheye.pheye_vit_cost(257, 1280, 10) == 51373683200
    assert pheye.llava_lm_cost(65, 2305, 2048) == 130789416960
    assert pheye.pheye_lm_cost(65, 2305, 2048, 1280, 2) == 10839198720
    ratio = Fraction(pheye.llava_lm_cost(65, 2305, 2048)) / pheye.pheye_lm_cost(65, 2305, 2048, 1280, 4)
    assert round(float(ratio), 2) == 18.53


def test_cost_report_matches_direct_calls():
    report = pheye.cost_report(interval=4)
    assert report["schema"] == "pheye.cost_report/1"
    assert report["ratio"] == "18.53"
    assert int(report["formulas"]["llava_lm"]["total"]) == pheye.llava_lm_cost(65, 2305, 2048)


def test_bad_inputs_raise_typed_errors():
    with pytest.raises(pheye.ConfigError):
        pheye.pheye_lm_cost(65, 2305, 2048, 1280, 0)
    with pytest.raises(pheye.PheyeError):
        pheye.relative_area(10, 0)
    with pytest.raises(pheye.ConfigError):
        pheye.parse_model_config("decoder.width = 3")


def test_verify_sweep_is_exact():
    for mode in ("formula", "full"):
        report = pheye.verify(mode)
        assert report["schema"] == "pheye.verify/1"
        assert report["exact"] is True


def test_token_counts():
    assert pheye.token_counts(224, 14, 672)["total"] == 2570
    assert pheye.token_counts(224, 14, 672)["full_resolution"] == 2305
    assert pheye.token_counts(224, 14, 448)["total"] == 1285


def difflib_similarity(a, b):
    a, b = a.lower(), b.lower()
    return max(difflib.SequenceMatcher(None, a, b, autojunk=False).ratio(),
               difflib.SequenceMatcher(None, b, a, autojunk=False).ratio())


def test_similarity_agrees_with_difflib():
    rng = random.Random(4)
    for _ in range(2000):
        a = "".join(rng.choice("abcAB ") for _ in range(rng.randrange(0, 15)))
        b = "".join(rng.choice("abcAB ") for _ in range(rng.randrange(0, 15)))
        assert pheye.string_similarity(a, b) == pytest.approx(difflib_similarity(a, b), abs=1e-15)


def test_tertiles_and_deltas():
    parts = pheye.tertile_partition([("s%d" % i, i / 10) for i in range(10)])
    assert [len(parts[k]) for k in ("bottom", "middle", "top")] == [4, 3, 3]
    assert pheye.format_delta(pheye.relative_change(40.67, 46.83)) == "+15.15"
    assert pheye.format_delta(pheye.relative_change(0.0, 5.0)) == "undefined"


def test_tertile_table_and_attention(tmp_path):
    samples = []
    for i in range(6):
        samples.append(json.dumps({
            "id": str(i), "image_area": 100, "question": "q", "answers": ["x"],
            "regions": [{"label": "x", "area": 10 + 10 * i}],
            "correct": {"lo": i % 2 == 0, "hi": True},
        }))
    table = json.loads(pheye.tertile_table("\n".join(samples), "lo", "hi", as_json=True))
    assert table["schema"] == "pheye.tertiles/1"

    uniform = [[[[0.25] * 4]]]
    record = json.dumps({"sample_id": "0", "global_count": 1, "local_count": 3, "layers": uniform})
    lines = pheye.attention_csv(record).splitlines()
    assert lines[0] == "layer,a_global,a_local"
    assert lines[1].startswith("0,0.25")
