#include "pheye/cost.hpp"

#include <json.hpp>
#include <sstream>

namespace pheye {

namespace {

void require_positive(std::uint64_t value, const char* name) {
    if (value == 0) throw ConfigError(std::string(name) + " must be at least 1");
}

BigInt big(std::uint64_t v) { return BigInt(v); }

}  // namespace

// --- per-layer formulas -----------------------------------------------------

IntBreakdown vit_breakdown(std::uint64_t n, std::uint64_t d) {
    require_positive(n, "N");
    require_positive(d, "D");
    const BigInt bn = big(n), bd = big(d);
    return {4 * bn * bd * bd, bd * bn * bn, bd * bn * bn, 8 * bn * bd * bd};
}

BigInt vit_cost(std::uint64_t n, std::uint64_t d) { return vit_breakdown(n, d).formula_total(); }

BigInt pheye_vit_cost(std::uint64_t n_prime, std::uint64_t d, std::uint64_t p) {
    require_positive(p, "P");
    return vit_cost(n_prime, d) * big(p);
}

IntBreakdown llava_lm_breakdown(std::uint64_t n_t, std::uint64_t n_i, std::uint64_t d) {
    require_positive(n_t, "N_T");
    require_positive(d, "D");
    const BigInt n = big(n_t) + big(n_i), bd = big(d);
    return {4 * n * bd * bd, bd * n * n, bd * n * n, 8 * n * bd * bd};
}

BigInt llava_lm_cost(std::uint64_t n_t, std::uint64_t n_i, std::uint64_t d) {
    return llava_lm_breakdown(n_t, n_i, d).formula_total();
}

IntBreakdown cross_block_breakdown(std::uint64_t n_t, std::uint64_t n_i, std::uint64_t d, std::uint64_t d_vit) {
    require_positive(n_t, "N_T");
    require_positive(d, "D");
    require_positive(d_vit, "D_ViT");
    const BigInt nt = big(n_t), ni = big(n_i), bd = big(d), dv = big(d_vit);
    return {2 * ni * dv * bd + 2 * nt * bd * bd, bd * nt * ni, bd * nt * ni, 8 * nt * bd * bd};
}

RationalBreakdown pheye_lm_breakdown(std::uint64_t n_t, std::uint64_t n_i, std::uint64_t d, std::uint64_t d_vit,
                                     std::uint64_t interval) {
    if (interval == 0) throw ConfigError("cross-attention interval I must be at least 1");
    const IntBreakdown self = vit_breakdown(n_t, d);  // plain decoder layer has the same shape
    const IntBreakdown cross = cross_block_breakdown(n_t, n_i, d, d_vit);
    const Rational per = Rational(1, big(interval));
    return {Rational(self.projection) + Rational(cross.projection) * per,
            Rational(self.attention_scores) + Rational(cross.attention_scores) * per,
            Rational(self.attention_values) + Rational(cross.attention_values) * per,
            Rational(self.feedforward) + Rational(cross.feedforward) * per};
}

Rational pheye_lm_cost(std::uint64_t n_t, std::uint64_t n_i, std::uint64_t d, std::uint64_t d_vit,
                       std::uint64_t interval) {
    return pheye_lm_breakdown(n_t, n_i, d, d_vit, interval).formula_total();
}

// --- whole runs -------------------------------------------------------------

IntBreakdown expected_vit_run(std::uint64_t n, std::uint64_t d, std::uint64_t layers, std::uint64_t p) {
    require_positive(layers, "layers");
    require_positive(p, "P");
    return vit_breakdown(n, d).scaled(big(layers) * big(p));
}

IntBreakdown expected_llava_run(std::uint64_t n_t, std::uint64_t n_i, std::uint64_t d, std::uint64_t layers) {
    require_positive(layers, "layers");
    return llava_lm_breakdown(n_t, n_i, d).scaled(big(layers));
}

IntBreakdown expected_pheye_lm_run(std::uint64_t n_t, std::uint64_t n_i, std::uint64_t d, std::uint64_t d_vit,
                                   std::uint64_t layers, std::uint64_t interval) {
    require_positive(layers, "layers");
    if (interval == 0) throw ConfigError("cross-attention interval I must be at least 1");
    const std::uint64_t blocks = (layers + interval - 1) / interval;
    IntBreakdown total = vit_breakdown(n_t, d).scaled(big(layers));
    total += cross_block_breakdown(n_t, n_i, d, d_vit).scaled(big(blocks));
    return total;
}

// --- rendering --------------------------------------------------------------

std::string to_fixed(const Rational& value, unsigned decimals) {
    const BigInt num = boost::multiprecision::numerator(value);
    const BigInt den = boost::multiprecision::denominator(value);
    const bool negative = num < 0;
    const BigInt mag = negative ? BigInt(-num) : num;
    BigInt scale = 1;
    for (unsigned i = 0; i < decimals; ++i) scale *= 10;
    BigInt scaled = (mag * scale) / den;
    const BigInt remainder = (mag * scale) % den;
    if (2 * remainder >= den) scaled += 1;

    std::string digits = scaled.str();
    if (digits.size() <= decimals) digits.insert(0, decimals + 1 - digits.size(), '0');
    std::string out = digits.substr(0, digits.size() - decimals);
    if (decimals > 0) out += "." + digits.substr(digits.size() - decimals);
    if (negative && scaled != 0) out.insert(0, "-");
    return out;
}

std::string to_exact_string(const Rational& value) {
    return boost::multiprecision::numerator(value).str() + "/" + boost::multiprecision::denominator(value).str();
}

std::string efficiency_ratio(const Rational& baseline, const Rational& method, unsigned decimals) {
    if (method == 0) throw NumericError("efficiency ratio: method cost is zero");
    return to_fixed(baseline / method, decimals);
}

// --- report -----------------------------------------------------------------

void CostInputs::validate() const {
    require_positive(n, "N");
    require_positive(n_prime, "N'");
    require_positive(p, "P");
    require_positive(n_t, "N_T");
    require_positive(d, "D");
    require_positive(d_vit, "D_ViT");
    require_positive(interval, "I");
    if (p > 1) {
        if ((n - 1) % (p - 1) != 0 || (n - 1) / (p - 1) + 1 != n_prime) {
            throw ConfigError("N' = " + std::to_string(n_prime) + " is inconsistent with N = " + std::to_string(n) +
                              " and P = " + std::to_string(p) + " (expected (N-1)/(P-1)+1)");
        }
    } else if (n_prime != n) {
        throw ConfigError("with P = 1, N' must equal N");
    }
}

CostReport make_cost_report(const CostInputs& in) {
    in.validate();
    CostReport r;
    r.inputs = in;
    r.vit = vit_breakdown(in.n, in.d_vit);
    r.pheye_vit = vit_breakdown(in.n_prime, in.d_vit).scaled(big(in.p));
    r.llava_lm = llava_lm_breakdown(in.n_t, in.n_i, in.d);
    r.pheye_lm = pheye_lm_breakdown(in.n_t, in.n_i, in.d, in.d_vit, in.interval);
    r.vision_ratio = Rational(r.vit.formula_total()) / Rational(r.pheye_vit.formula_total());
    r.language_ratio = Rational(r.llava_lm.formula_total()) / r.pheye_lm.formula_total();
    return r;
}

namespace {

template <typename Number>
std::string render(const Number& value) {
    if constexpr (std::is_same_v<Number, Rational>) {
        return boost::multiprecision::denominator(value) == 1 ? boost::multiprecision::numerator(value).str()
                                                               : to_exact_string(value);
    } else {
        return value.str();
    }
}

template <typename Number>
nlohmann::ordered_json breakdown_json(const CostBreakdown<Number>& b) {
    return {{"total", render(b.formula_total())},
            {"projection", render(b.projection)},
            {"attention", render(b.attention_scores)},
            {"feedforward", render(b.feedforward)},
            {"attention_values_excluded", render(b.attention_values)}};
}

nlohmann::ordered_json ratio_json(const Rational& value) {
    return {{"exact", to_exact_string(value)}, {"decimal", to_fixed(value, 2)}, {"decimal4", to_fixed(value, 4)}};
}

}  // namespace

std::string cost_report_json(const CostReport& r) {
    const auto& in = r.inputs;
    nlohmann::ordered_json j;
    j["schema"] = "pheye.cost_report/1";
    j["inputs"] = {{"n", in.n},     {"n_prime", in.n_prime}, {"p", in.p},         {"n_t", in.n_t},
                   {"n_i", in.n_i}, {"d", in.d},             {"d_vit", in.d_vit}, {"i", in.interval}};
    j["formulas"] = {{"vit", breakdown_json(r.vit)},
                     {"pheye_vit", breakdown_json(r.pheye_vit)},
                     {"llava_lm", breakdown_json(r.llava_lm)},
                     {"pheye_lm", breakdown_json(r.pheye_lm)}};
    j["ratios"] = {{"vision", ratio_json(r.vision_ratio)}, {"language", ratio_json(r.language_ratio)}};
    j["ratio"] = to_fixed(r.language_ratio, 2);
    return j.dump(2) + "\n";
}

std::string cost_report_csv(const CostReport& r) {
    std::ostringstream out;
    out << "formula,total,projection,attention,feedforward\n";
    auto row = [&out](const char* name, const auto& b) {
        out << name << ',' << render(b.formula_total()) << ',' << render(b.projection) << ','
            << render(b.attention_scores) << ',' << render(b.feedforward) << '\n';
    };
    row("vit", r.vit);
    row("pheye_vit", r.pheye_vit);
    row("llava_lm", r.llava_lm);
    row("pheye_lm", r.pheye_lm);
    out << "\nratio,exact,decimal,decimal4\n";
    out << "vision," << to_exact_string(r.vision_ratio) << ',' << to_fixed(r.vision_ratio, 2) << ','
        << to_fixed(r.vision_ratio, 4) << '\n';
    out << "language," << to_exact_string(r.language_ratio) << ',' << to_fixed(r.language_ratio, 2) << ','
        << to_fixed(r.language_ratio, 4) << '\n';
    return out.str();
}

// --- reconciliation ---------------------------------------------------------

bool Reconciliation::exact() const {
    for (const auto& c : categories)
        if (c.delta != 0) return false;
    return delta() == 0;
}

Reconciliation reconcile(const IntBreakdown& analytic, const MulLedger& ledger, Accounting accounting) {
    Reconciliation r;
    r.accounting = accounting;
    r.out_of_model = ledger.get(MulCategory::other);
    std::vector<std::pair<MulCategory, BigInt>> compared = {{MulCategory::projection, analytic.projection},
                                                            {MulCategory::attention_scores, analytic.attention_scores},
                                                            {MulCategory::feedforward, analytic.feedforward}};
    if (accounting == Accounting::full) compared.emplace_back(MulCategory::attention_values, analytic.attention_values);

    for (const auto& [category, expected] : compared) {
        const BigInt counted = big(ledger.get(category));
        if (expected == 0 && counted != 0) {
            throw ContractError("ledger counts " + counted.str() + " " + std::string(to_string(category)) +
                                " multiplications where none are expected; geometry mismatch");
        }
        r.categories.push_back({std::string(to_string(category)), expected, counted, counted - expected});
        r.analytic_total += expected;
        r.counted_total += counted;
    }
    if (r.counted_total == 0 && r.analytic_total != 0) {
        throw ContractError("ledger is empty but the analytic count is " + r.analytic_total.str());
    }
    return r;
}

}  // namespace pheye
