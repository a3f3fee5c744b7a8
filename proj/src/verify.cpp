#include "pheye/verify.hpp"

#include <json.hpp>

namespace pheye {

namespace {

SweepGeometry geometry(std::string name, std::size_t base, std::size_t target, std::size_t d_vit, std::size_t d,
                       std::size_t n_t, std::size_t layers, std::size_t interval) {
    SweepGeometry g;
    g.name = std::move(name);
    g.vision.base_resolution = base;
    g.vision.target_resolution = target;
    g.vision.patch_size = 14;
    g.vision.d_model = d_vit;
    g.vision.layers = 2;
    g.vision.heads = 2;
    g.decoder.d_model = d;
    g.decoder.layers = layers;
    g.decoder.heads = 2;
    g.decoder.vocab_size = 16;
    g.decoder.interval = interval;
    g.decoder.max_text_len = 16;
    g.n_t = n_t;
    return g;
}

Image random_image(std::size_t channels, std::size_t side, Rng& rng) {
    Image img = Image::filled(channels, side, side);
    for (auto& v : img.pixels) v = rng.uniform();
    return img;
}

}  // namespace

std::vector<SweepGeometry> toy_sweep() {
    return {
        geometry("g1", 28, 56, 8, 8, 3, 2, 1),
        geometry("g2", 42, 84, 8, 16, 4, 4, 2),
        geometry("g3", 56, 112, 16, 8, 5, 4, 4),
        geometry("g4", 28, 84, 16, 16, 6, 2, 2),
        geometry("g5", 42, 126, 16, 16, 2, 6, 3),
    };
}

bool VerifyReport::all_exact() const {
    for (const auto& row : rows)
        if (!row.result.exact()) return false;
    return !rows.empty();
}

std::string VerifyReport::json() const {
    nlohmann::ordered_json j;
    j["schema"] = "pheye.verify/1";
    j["exact"] = all_exact();
    j["rows"] = nlohmann::ordered_json::array();
    for (const auto& row : rows) {
        nlohmann::ordered_json r;
        r["geometry"] = row.geometry;
        r["formula"] = row.formula;
        r["accounting"] = row.result.accounting == Accounting::formula ? "formula" : "full";
        r["analytic"] = row.result.analytic_total.str();
        r["counted"] = row.result.counted_total.str();
        r["delta"] = row.result.delta().str();
        r["out_of_model"] = row.result.out_of_model;
        nlohmann::ordered_json cats = nlohmann::ordered_json::object();
        for (const auto& c : row.result.categories) cats[c.category] = c.delta.str();
        r["category_delta"] = cats;
        j["rows"].push_back(r);
    }
    return j.dump(2) + "\n";
}

VerifyReport run_verify(const std::vector<SweepGeometry>& sweep, Accounting accounting, std::uint64_t seed) {
    VerifyReport report;
    for (const auto& g : sweep) {
        const Model model = build_model(g.decoder, g.vision, seed);
        Rng rng(seed + 1);
        const Image image = random_image(g.vision.channels, g.vision.target_resolution, rng);
        std::vector<int> text(g.n_t);
        for (auto& t : text) t = static_cast<int>(rng.uniform_index(g.decoder.vocab_size));

        const std::size_t n_full = g.vision.full_resolution_tokens();
        const std::size_t n_prime = g.vision.tokens_per_image();
        const std::size_t p = g.vision.sub_image_count();
        const std::size_t n_i = p * n_prime;
        const std::size_t dv = g.vision.d_model, d = g.decoder.d_model;
        const std::size_t vit_layers = g.vision.layers, lm_layers = g.decoder.layers;

        // One ViT applied directly at full resolution.
        {
            const Vit full = Vit::random(g.vision.at_full_resolution(), rng);
            MulLedger ledger;
            ForwardContext ctx{ledger};
            vit_forward(image, full, nullptr, ctx);
            report.rows.push_back({g.name, "vit", reconcile(expected_vit_run(n_full, dv, vit_layers), ledger, accounting)});
        }

        MulLedger vision_ledger;
        ForwardContext vision_ctx{vision_ledger};
        const VisionTokens vision = model.encoder.encode(image, model.vit, vision_ctx);
        report.rows.push_back(
            {g.name, "pheye_vit", reconcile(expected_vit_run(n_prime, dv, vit_layers, p), vision_ledger, accounting)});

        {
            const LlavaProjector projector = LlavaProjector::create(dv, d, rng);
            MulLedger ledger;
            ForwardContext ctx{ledger};
            llava_forward(model, text, projector(vision.tokens, ledger), ctx);
            report.rows.push_back(
                {g.name, "llava_lm", reconcile(expected_llava_run(g.n_t, n_i, d, lm_layers), ledger, accounting)});
        }
        {
            MulLedger ledger;
            ForwardContext ctx{ledger};
            forward(model, text, vision, ctx);
            report.rows.push_back(
                {g.name, "pheye_lm",
                 reconcile(expected_pheye_lm_run(g.n_t, n_i, d, dv, lm_layers, g.decoder.interval), ledger,
                           accounting)});
        }
    }
    return report;
}

}  // namespace pheye
