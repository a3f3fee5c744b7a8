#include <doctest.h>

#include <json.hpp>
#include <limits>
#include <set>

#include "pheye/cost.hpp"
#include "pheye/decoder.hpp"
#include "pheye/errors.hpp"
#include "pheye/verify.hpp"

using namespace pheye;

namespace {

using u128 = unsigned __int128;

// Direct 128-bit evaluation, term by term.
u128 vit_ref(u128 n, u128 d) { return 4 * n * d * d + d * n * n + 8 * n * d * d; }

BigInt big(u128 v) {
    BigInt out = 0;
    for (int shift = 96; shift >= 0; shift -= 32) out = (out << 32) | BigInt(static_cast<std::uint32_t>(v >> shift));
    return out;
}

}  // namespace

TEST_CASE("full-resolution vit cost") {
    CHECK(vit_cost(2305, 1280) == BigInt(52118816000ull));
    CHECK(vit_cost(1, 1) == 13);
    CHECK(vit_cost(5, 8) == 4040);
}

TEST_CASE("multi-patch vit cost") {
    CHECK(pheye_vit_cost(257, 1280, 10) == BigInt(51373683200ull));
    CHECK(pheye_vit_cost(257, 1280, 1) == vit_cost(257, 1280));
    CHECK(efficiency_ratio(Rational(vit_cost(2305, 1280)), Rational(pheye_vit_cost(257, 1280, 10)), 4) == "1.0145");
}

TEST_CASE("concatenation decoder cost") {
    CHECK(llava_lm_cost(65, 2305, 2048) == BigInt(130789416960ull));
    CHECK(llava_lm_cost(65, 0, 2048) == vit_cost(65, 2048));
    CHECK(llava_lm_cost(3, 2, 8) == 4040);
}

TEST_CASE("cross-attention decoder cost") {
    CHECK(pheye_lm_cost(65, 2305, 2048, 1280, 2) == Rational(BigInt(10839198720ull)));
    CHECK(pheye_lm_cost(65, 2305, 2048, 1280, 4) == Rational(BigInt(7059704320ull)));
    CHECK_THROWS_AS(pheye_lm_cost(65, 2305, 2048, 1280, 0), ConfigError);
    // odd interval keeps the fraction exact
    const Rational third = pheye_lm_cost(3, 7, 4, 5, 3);
    CHECK(third * 3 == Rational(vit_cost(3, 4) * 3 + cross_block_breakdown(3, 7, 4, 5).formula_total()));
}

TEST_CASE("headline ratios") {
    const Rational llava(llava_lm_cost(65, 2305, 2048));
    CHECK(efficiency_ratio(llava, pheye_lm_cost(65, 2305, 2048, 1280, 2)) == "12.07");
    CHECK(efficiency_ratio(llava, pheye_lm_cost(65, 2305, 2048, 1280, 4)) == "18.53");
    CHECK(efficiency_ratio(llava, pheye_lm_cost(65, 2305, 2048, 1280, 2), 4) == "12.0663");
    CHECK(efficiency_ratio(llava, pheye_lm_cost(65, 2305, 2048, 1280, 4), 4) == "18.5262");
    CHECK(efficiency_ratio(Rational(7), Rational(7)) == "1.00");
    CHECK_THROWS_AS(efficiency_ratio(Rational(7), Rational(0)), NumericError);
}

TEST_CASE("fixed-point rendering rounds half away from zero") {
    CHECK(to_fixed(Rational(1, 8), 2) == "0.13");
    CHECK(to_fixed(Rational(-1, 8), 2) == "-0.13");
    CHECK(to_fixed(Rational(1, 3), 0) == "0");
    CHECK(to_fixed(Rational(5, 2), 0) == "3");
    CHECK(to_fixed(Rational(1, 1000), 2) == "0.00");
    CHECK(to_exact_string(Rational(6, 4)) == "3/2");
}

TEST_CASE("big-integer results agree with 128-bit evaluation") {
    for (std::uint64_t n : {1ull, 5ull, 257ull, 2305ull, 100000ull})
        for (std::uint64_t d : {1ull, 8ull, 1280ull, 2048ull, 65536ull}) {
            CHECK(vit_cost(n, d) == big(vit_ref(n, d)));
            CHECK(llava_lm_cost(n, 3 * n, d) == big(vit_ref(4 * n, d)));
        }
    // beyond 64 bits
    CHECK(vit_cost(1ull << 22, 1ull << 22) > BigInt(std::numeric_limits<std::uint64_t>::max()));
}

TEST_CASE("costs increase in every argument") {
    const std::uint64_t nt = 7, ni = 11, d = 6, dv = 5, i = 2;
    const Rational base = pheye_lm_cost(nt, ni, d, dv, i);
    CHECK(pheye_lm_cost(nt + 1, ni, d, dv, i) > base);
    CHECK(pheye_lm_cost(nt, ni + 1, d, dv, i) > base);
    CHECK(pheye_lm_cost(nt, ni, d + 1, dv, i) > base);
    CHECK(pheye_lm_cost(nt, ni, d, dv + 1, i) > base);
    CHECK(vit_cost(6, 5) > vit_cost(5, 5));
    CHECK(vit_cost(5, 6) > vit_cost(5, 5));
    CHECK(llava_lm_cost(nt, ni + 1, d) > llava_lm_cost(nt, ni, d));
    CHECK(pheye_vit_cost(5, 8, 3) > pheye_vit_cost(5, 8, 2));
}

TEST_CASE("larger intervals are cheaper and approach the plain decoder") {
    Rational prev = pheye_lm_cost(65, 2305, 2048, 1280, 1);
    for (std::uint64_t i = 2; i <= 64; ++i) {
        const Rational cur = pheye_lm_cost(65, 2305, 2048, 1280, i);
        CHECK(cur < prev);
        CHECK(cur > Rational(vit_cost(65, 2048)));
        prev = cur;
    }
    const Rational far = pheye_lm_cost(65, 2305, 2048, 1280, 1000000000ull);
    const Rational plain(vit_cost(65, 2048));
    CHECK((far - plain) / plain < Rational(1, 1000000));
}

TEST_CASE("breakdowns sum to totals") {
    const auto b = llava_lm_breakdown(65, 2305, 2048);
    CHECK(b.projection + b.attention_scores + b.feedforward == llava_lm_cost(65, 2305, 2048));
    CHECK(b.full_total() - b.formula_total() == BigInt(2048) * 2370 * 2370);
    const auto r = pheye_lm_breakdown(65, 2305, 2048, 1280, 2);
    CHECK(r.projection + r.attention_scores + r.feedforward == pheye_lm_cost(65, 2305, 2048, 1280, 2));
}

TEST_CASE("cost inputs validation") {
    CostInputs in;
    CHECK_NOTHROW(in.validate());
    in.n_prime = 256;
    CHECK_THROWS_AS(in.validate(), ConfigError);
    in = CostInputs{};
    in.d = 0;
    CHECK_THROWS_AS(in.validate(), ConfigError);
    in = CostInputs{};
    in.p = 1;
    in.n_prime = in.n;
    CHECK_NOTHROW(in.validate());
    CHECK_THROWS_AS(vit_cost(0, 3), ConfigError);
}

TEST_CASE("cost report json") {
    const auto j = nlohmann::json::parse(cost_report_json(make_cost_report(CostInputs{})));
    CHECK(j["schema"] == "pheye.cost_report/1");
    CHECK(j["ratio"] == "12.07");
    CHECK(j["formulas"]["vit"]["total"] == "52118816000");
    CHECK(j["formulas"]["pheye_vit"]["total"] == "51373683200");
    CHECK(j["formulas"]["llava_lm"]["total"] == "130789416960");
    CHECK(j["formulas"]["pheye_lm"]["total"] == "10839198720");
    CHECK(j["ratios"]["vision"]["decimal4"] == "1.0145");
    CostInputs four;
    four.interval = 4;
    CHECK(nlohmann::json::parse(cost_report_json(make_cost_report(four)))["ratio"] == "18.53");
    const std::string csv = cost_report_csv(make_cost_report(CostInputs{}));
    CHECK(csv.find("llava_lm,130789416960,") != std::string::npos);
    CHECK(csv.find("language,8514936/705677,12.07,12.0663") != std::string::npos);
}

TEST_CASE("reconcile a toy vit run") {
    VitGeometry g;
    g.base_resolution = 28;
    g.target_resolution = 28;
    g.d_model = 8;
    g.layers = 1;
    Rng rng(1);
    const Vit vit = Vit::random(g, rng);
    Image img = Image::filled(3, 28, 28);
    for (auto& v : img.pixels) v = rng.uniform();
    MulLedger ledger;
    ForwardContext ctx{ledger};
    vit_forward(img, vit, nullptr, ctx);

    const auto formula = reconcile(expected_vit_run(5, 8, 1), ledger, Accounting::formula);
    CHECK(formula.analytic_total == 4040);
    CHECK(formula.counted_total == 4040);
    CHECK(formula.exact());
    const auto full = reconcile(expected_vit_run(5, 8, 1), ledger, Accounting::full);
    CHECK(full.exact());
    CHECK(full.counted_total - formula.counted_total == 8 * 5 * 5);
    CHECK(formula.out_of_model == ledger.get(MulCategory::other));

    // wrong geometry
    const auto off = reconcile(expected_vit_run(5, 16, 1), ledger, Accounting::formula);
    CHECK(!off.exact());
    CHECK_THROWS_AS(reconcile(expected_vit_run(5, 8, 1), MulLedger{}, Accounting::formula), ContractError);
}

TEST_CASE("reconcile a toy concatenation layer") {
    DecoderGeometry dg;
    dg.d_model = 8;
    dg.layers = 1;
    dg.interval = 1;
    VitGeometry vg;
    vg.d_model = 8;
    vg.layers = 1;
    const Model m = build_model(dg, vg, 2);
    MulLedger ledger;
    ForwardContext ctx{ledger};
    Rng rng(3);
    const std::vector<int> text = {1, 2, 3};
    llava_forward(m, text, Tensor::randn({2, 8}, rng, 1.0), ctx);
    CHECK(reconcile(expected_llava_run(3, 2, 8, 1), ledger, Accounting::formula).exact());
    CHECK(reconcile(expected_llava_run(3, 2, 8, 1), ledger, Accounting::full).exact());
}

TEST_CASE("reconciliation sweep is exact in both modes") {
    const auto sweep = toy_sweep();
    CHECK(sweep.size() == 5);
    std::set<std::size_t> n_primes, widths, intervals;
    for (const auto& g : sweep) {
        n_primes.insert(g.vision.tokens_per_image());
        widths.insert(g.decoder.d_model);
        intervals.insert(g.decoder.interval);
    }
    CHECK(n_primes == std::set<std::size_t>{5, 10, 17});
    CHECK(widths == std::set<std::size_t>{8, 16});
    CHECK(intervals.size() == 4);
    for (auto mode : {Accounting::formula, Accounting::full}) {
        const auto report = run_verify(sweep, mode);
        CHECK(report.rows.size() == 20);
        CHECK(report.all_exact());
    }
}

TEST_CASE("pheye lm run equals layers times the per-layer average when I divides L") {
    const auto run = expected_pheye_lm_run(5, 50, 16, 8, 4, 2);
    CHECK(Rational(run.formula_total()) == pheye_lm_cost(5, 50, 16, 8, 2) * 4);
}
