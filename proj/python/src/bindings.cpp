#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "pheye/analysis.hpp"
#include "pheye/config.hpp"
#include "pheye/cost.hpp"
#include "pheye/verify.hpp"

namespace py = pybind11;
using namespace pheye;

namespace {

std::string big(const BigInt& v) { return v.str(); }

// (numerator, denominator) as decimal strings; the Python side builds a Fraction.
std::pair<std::string, std::string> frac(const Rational& r) {
    return {boost::multiprecision::numerator(r).str(), boost::multiprecision::denominator(r).str()};
}

CostInputs inputs(std::uint64_t n_t, std::uint64_t n_i, std::uint64_t d, std::uint64_t d_vit, std::uint64_t interval,
                  std::uint64_t n, std::uint64_t n_prime, std::uint64_t p) {
    CostInputs in;
    in.n_t = n_t;
    in.n_i = n_i;
    in.d = d;
    in.d_vit = d_vit;
    in.interval = interval;
    in.n = n;
    in.n_prime = n_prime;
    in.p = p;
    return in;
}

}  // namespace

PYBIND11_MODULE(_pheye, m) {
    m.doc() = "Bindings for the pheye cost model, verification sweep and analysis helpers";

    auto base = py::register_exception<Error>(m, "PheyeError", PyExc_RuntimeError);
    py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
    py::register_exception<NumericError>(m, "NumericError", base.ptr());
    py::register_exception<InputError>(m, "InputError", base.ptr());
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<ContractError>(m, "ContractError", base.ptr());
    py::register_exception<TrainingError>(m, "TrainingError", base.ptr());

    m.def("vit_cost", [](std::uint64_t n, std::uint64_t d) { return big(vit_cost(n, d)); }, py::arg("n"), py::arg("d"));
    m.def("pheye_vit_cost",
          [](std::uint64_t n_prime, std::uint64_t d, std::uint64_t p) { return big(pheye_vit_cost(n_prime, d, p)); },
          py::arg("n_prime"), py::arg("d"), py::arg("p"));
    m.def("llava_lm_cost",
          [](std::uint64_t n_t, std::uint64_t n_i, std::uint64_t d) { return big(llava_lm_cost(n_t, n_i, d)); },
          py::arg("n_t"), py::arg("n_i"), py::arg("d"));
    m.def("pheye_lm_cost",
          [](std::uint64_t n_t, std::uint64_t n_i, std::uint64_t d, std::uint64_t d_vit, std::uint64_t interval) {
              return frac(pheye_lm_cost(n_t, n_i, d, d_vit, interval));
          },
          py::arg("n_t"), py::arg("n_i"), py::arg("d"), py::arg("d_vit"), py::arg("interval"));
    m.def("cost_report_json",
          [](std::uint64_t n_t, std::uint64_t n_i, std::uint64_t d, std::uint64_t d_vit, std::uint64_t interval,
             std::uint64_t n, std::uint64_t n_prime, std::uint64_t p) {
              return cost_report_json(make_cost_report(inputs(n_t, n_i, d, d_vit, interval, n, n_prime, p)));
          },
          py::arg("n_t") = 65, py::arg("n_i") = 2305, py::arg("d") = 2048, py::arg("d_vit") = 1280,
          py::arg("interval") = 2, py::arg("n") = 2305, py::arg("n_prime") = 257, py::arg("p") = 10);

    m.def(
        "verify_json",
        [](const std::string& accounting) {
            if (accounting != "formula" && accounting != "full") throw ConfigError("accounting must be formula or full");
            return run_verify(toy_sweep(), accounting == "full" ? Accounting::full : Accounting::formula).json();
        },
        py::arg("accounting") = "formula");

    m.def(
        "token_counts",
        [](std::size_t base_resolution, std::size_t patch_size, std::size_t target_resolution) {
            VitGeometry g;
            g.base_resolution = base_resolution;
            g.patch_size = patch_size;
            g.target_resolution = target_resolution;
            g.validate();
            py::dict out;
            out["sub_images"] = g.sub_image_count();
            out["per_sub_image"] = g.tokens_per_image();
            out["total"] = g.total_tokens();
            out["full_resolution"] = g.full_resolution_tokens();
            return out;
        },
        py::arg("base_resolution"), py::arg("patch_size"), py::arg("target_resolution"));

    m.def("string_similarity", &string_similarity, py::arg("a"), py::arg("b"));
    m.def("matching_characters", &matching_characters, py::arg("a"), py::arg("b"));
    m.def("relative_area", &relative_area, py::arg("region_area"), py::arg("image_area"));
    m.def("relative_change", &relative_change, py::arg("low_accuracy"), py::arg("high_accuracy"));
    m.def("format_delta", &format_delta, py::arg("delta"));
    m.def(
        "tertile_partition",
        [](const std::vector<std::pair<std::string, double>>& items) {
            std::vector<ScoredSample> scored;
            for (const auto& [id, s] : items) scored.push_back({id, s});
            const auto p = tertile_partition(scored);
            py::dict out;
            out["bottom"] = p.bottom;
            out["middle"] = p.middle;
            out["top"] = p.top;
            out["boundaries"] = std::make_pair(p.lower_boundary, p.upper_boundary);
            return out;
        },
        py::arg("items"));
    m.def(
        "tertile_table",
        [](const std::string& samples_jsonl, const std::string& low, const std::string& high, bool as_json) {
            const auto table = tertile_accuracy_delta(parse_samples_jsonl(samples_jsonl), low, high);
            return as_json ? table.json() : table.csv();
        },
        py::arg("samples_jsonl"), py::arg("low"), py::arg("high"), py::arg("as_json") = false);
    m.def(
        "attention_csv",
        [](const std::string& maps_jsonl) {
            const auto records = parse_attention_jsonl(maps_jsonl);
            if (records.empty()) throw InputError("no attention records");
            return attention_aggregate(records, records.front().global_count, records.front().local_count).csv();
        },
        py::arg("maps_jsonl"));

    m.def("parse_model_config", [](const std::string& text) { return model_config_text(parse_model_config(text)); },
          py::arg("text"), "Validates a config and returns it in canonical form.");
}
