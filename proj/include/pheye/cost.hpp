#pragma once

#include <boost/multiprecision/cpp_int.hpp>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pheye/tensor.hpp"

namespace pheye {

using BigInt = boost::multiprecision::cpp_int;
using Rational = boost::multiprecision::cpp_rational;

// Multiplication counts for linear layers and attention, split the same way
// the ledger is. Matmuls outside the transformer layers (patch embedding,
// adapters, unembedding) are not modelled.
template <typename Number>
struct CostBreakdown {
    Number projection{0};
    Number attention_scores{0};
    Number attention_values{0};
    Number feedforward{0};

    // attention_values is not part of the formulas; it is tracked so `full`
    // accounting can be checked too.
    Number formula_total() const { return projection + attention_scores + feedforward; }
    Number full_total() const { return formula_total() + attention_values; }

    CostBreakdown& operator+=(const CostBreakdown& o) {
        projection += o.projection;
        attention_scores += o.attention_scores;
        attention_values += o.attention_values;
        feedforward += o.feedforward;
        return *this;
    }
    CostBreakdown scaled(const Number& factor) const {
        return {projection * factor, attention_scores * factor, attention_values * factor, feedforward * factor};
    }
};

using IntBreakdown = CostBreakdown<BigInt>;
using RationalBreakdown = CostBreakdown<Rational>;

// --- per-layer formulas -----------------------------------------------------

// One ViT layer over n tokens of width d: 4nd^2 + dn^2 + 8nd^2.
BigInt vit_cost(std::uint64_t n, std::uint64_t d);
// P sub-images of n' tokens each.
BigInt pheye_vit_cost(std::uint64_t n_prime, std::uint64_t d, std::uint64_t p);
// Decoder layer over the concatenated (n_t + n_i) sequence.
BigInt llava_lm_cost(std::uint64_t n_t, std::uint64_t n_i, std::uint64_t d);
// Average per decoder layer with a dense cross-attention block every i layers.
Rational pheye_lm_cost(std::uint64_t n_t, std::uint64_t n_i, std::uint64_t d, std::uint64_t d_vit,
                       std::uint64_t interval);

IntBreakdown vit_breakdown(std::uint64_t n, std::uint64_t d);
IntBreakdown llava_lm_breakdown(std::uint64_t n_t, std::uint64_t n_i, std::uint64_t d);
// Cross-attention block alone (numerator of the fractional term).
IntBreakdown cross_block_breakdown(std::uint64_t n_t, std::uint64_t n_i, std::uint64_t d, std::uint64_t d_vit);
RationalBreakdown pheye_lm_breakdown(std::uint64_t n_t, std::uint64_t n_i, std::uint64_t d, std::uint64_t d_vit,
                                     std::uint64_t interval);

// --- whole-run expectations (what an instrumented execution should count) ---

IntBreakdown expected_vit_run(std::uint64_t n, std::uint64_t d, std::uint64_t layers, std::uint64_t p = 1);
IntBreakdown expected_llava_run(std::uint64_t n_t, std::uint64_t n_i, std::uint64_t d, std::uint64_t layers);
// ceil(layers / interval) cross blocks; equals layers * pheye_lm_cost when
// interval divides layers.
IntBreakdown expected_pheye_lm_run(std::uint64_t n_t, std::uint64_t n_i, std::uint64_t d, std::uint64_t d_vit,
                                   std::uint64_t layers, std::uint64_t interval);

// --- rendering --------------------------------------------------------------

// Fixed-point rendering, rounded half away from zero, computed exactly.
std::string to_fixed(const Rational& value, unsigned decimals);
std::string to_exact_string(const Rational& value);  // "num/den"
// baseline / method rendered with `decimals` places.
std::string efficiency_ratio(const Rational& baseline, const Rational& method, unsigned decimals = 2);

// --- report -----------------------------------------------------------------

struct CostInputs {
    std::uint64_t n = 2305;       // ViT tokens at full resolution
    std::uint64_t n_prime = 257;  // tokens per sub-image
    std::uint64_t p = 10;         // sub-images
    std::uint64_t n_t = 65;
    std::uint64_t n_i = 2305;
    std::uint64_t d = 2048;
    std::uint64_t d_vit = 1280;
    std::uint64_t interval = 2;

    // All values >= 1 (n_i >= 0) and n' == (n - 1)/(p - 1) + 1 when p > 1.
    void validate() const;
};

struct CostReport {
    CostInputs inputs;
    IntBreakdown vit;          // one full-resolution ViT layer
    IntBreakdown pheye_vit;    // P sub-images
    IntBreakdown llava_lm;
    RationalBreakdown pheye_lm;
    Rational vision_ratio;    // vit / pheye_vit
    Rational language_ratio;  // llava_lm / pheye_lm
};

CostReport make_cost_report(const CostInputs& inputs);
std::string cost_report_json(const CostReport& report);
std::string cost_report_csv(const CostReport& report);

// --- reconciliation ---------------------------------------------------------

enum class Accounting { formula, full };

struct CategoryDelta {
    std::string category;
    BigInt analytic;
    BigInt counted;
    BigInt delta;  // counted - analytic
};

struct Reconciliation {
    Accounting accounting = Accounting::formula;
    std::vector<CategoryDelta> categories;
    BigInt analytic_total;
    BigInt counted_total;
    std::uint64_t out_of_model = 0;  // ledger `other`, reported but never compared

    BigInt delta() const { return counted_total - analytic_total; }
    bool exact() const;
};

// Compares an analytic expectation with an instrumented ledger. Under `formula`
// accounting the value matmuls are left out on both sides.
Reconciliation reconcile(const IntBreakdown& analytic, const MulLedger& ledger, Accounting accounting);

}  // namespace pheye
