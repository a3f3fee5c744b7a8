// pheye: cost model, reconciliation sweep, toy forward/training and the
// analysis pipelines behind one binary.

#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <set>

#include "pheye/analysis.hpp"
#include "pheye/config.hpp"
#include "pheye/cost.hpp"
#include "pheye/image_io.hpp"
#include "pheye/training.hpp"
#include "pheye/verify.hpp"

using namespace pheye;

namespace {

std::uint64_t default_seed() {
    if (const char* env = std::getenv("PHEYE_SEED")) {
        try {
            return std::stoull(env);
        } catch (const std::exception&) {
            throw ConfigError(std::string("PHEYE_SEED is not an unsigned integer: ") + env);
        }
    }
    return 0;
}

nlohmann::ordered_json ledger_json(const MulLedger& ledger) {
    nlohmann::ordered_json j;
    for (auto c : kAllMulCategories) j[std::string(to_string(c))] = ledger.get(c);
    j["total"] = ledger.total();
    return j;
}

std::vector<int> parse_ids(const std::string& text) {
    std::vector<int> ids;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const auto comma = std::min(text.find(',', pos), text.size());
        const std::string item = text.substr(pos, comma - pos);
        try {
            std::size_t used = 0;
            ids.push_back(std::stoi(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw InputError("bad token id '" + item + "'");
        }
        pos = comma + 1;
    }
    return ids;
}

void write_out(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path);
    out << text;
}

std::pair<std::string, std::string> pick_models(const std::vector<AnnotatedSample>& samples, std::string low,
                                                std::string high) {
    if (!low.empty() && !high.empty()) return {low, high};
    if (samples.empty()) throw InputError("no samples");
    std::vector<std::string> ids;
    for (const auto& [id, _] : samples.front().correct) ids.push_back(id);
    if (ids.size() != 2) throw InputError("pass --low and --high: samples carry " + std::to_string(ids.size()) + " model ids");
    return {low.empty() ? ids[0] : low, high.empty() ? ids[1] : high};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"High-resolution vision-language toy model: cost model, verification and analysis"};
    app.require_subcommand(1);

    // cost
    CostInputs cost_in;
    bool cost_csv = false, cost_json = false;
    auto* cost = app.add_subcommand("cost", "Analytic multiplication counts and efficiency ratios");
    cost->add_option("--nt", cost_in.n_t, "Text tokens N_T")->capture_default_str();
    cost->add_option("--ni", cost_in.n_i, "Vision tokens N_I seen by the decoder")->capture_default_str();
    cost->add_option("--d", cost_in.d, "Decoder width D")->capture_default_str();
    cost->add_option("--dvit", cost_in.d_vit, "Vision width D_ViT")->capture_default_str();
    cost->add_option("--i", cost_in.interval, "Cross-attention interval I")->capture_default_str();
    cost->add_option("--n", cost_in.n, "Full-resolution ViT tokens N")->capture_default_str();
    cost->add_option("--np", cost_in.n_prime, "Tokens per sub-image N'")->capture_default_str();
    cost->add_option("--p", cost_in.p, "Sub-images P")->capture_default_str();
    auto* json_flag = cost->add_flag("--json", cost_json, "JSON output (default)");
    cost->add_flag("--csv", cost_csv, "CSV output")->excludes(json_flag);

    // verify
    std::string accounting = "both";
    auto* verify = app.add_subcommand("verify", "Reconcile instrumented counts with the formulas over a toy sweep");
    verify->add_option("--accounting", accounting, "formula, full or both")
        ->check(CLI::IsMember({"formula", "full", "both"}))
        ->capture_default_str();

    // demo-forward
    std::string config_path, image_path, prompt = "1,3", weights_path;
    auto* demo = app.add_subcommand("demo-forward", "One instrumented forward pass");
    demo->add_option("--config", config_path, "Model config (key = value)")->required()->check(CLI::ExistingFile);
    demo->add_option("--image", image_path, "PPM or PNG image")->required()->check(CLI::ExistingFile);
    demo->add_option("--prompt", prompt, "Comma-separated token ids")->capture_default_str();
    demo->add_option("--weights", weights_path, "Weights file to load")->check(CLI::ExistingFile);

    // train-toy
    int stage = 1;
    std::size_t steps = 200, batch = 16, micro = 4;
    std::optional<std::uint64_t> seed_flag;
    std::optional<double> lr_flag;
    bool ablate = false;
    std::string train_config, train_out, save_path;
    auto* train_cmd = app.add_subcommand("train-toy", "Train the trainable set on the synthetic rectangle task");
    train_cmd->add_option("--stage", stage, "Learning-rate preset 1, 2 or 3")
        ->check(CLI::IsMember({1, 2, 3}))
        ->capture_default_str();
    train_cmd->add_option("--steps", steps, "Optimizer steps")->capture_default_str();
    train_cmd->add_option("--seed", seed_flag, "Seed (default: $PHEYE_SEED or 0)");
    train_cmd->add_option("--lr", lr_flag, "Override the stage learning rate");
    train_cmd->add_option("--batch", batch, "Sequences per update")->capture_default_str();
    train_cmd->add_option("--micro", micro, "Sequences per backward pass")->capture_default_str();
    train_cmd->add_flag("--ablate-vision", ablate, "Zero the vision tokens (control run)");
    train_cmd->add_option("--config", train_config, "Model config")->check(CLI::ExistingFile);
    train_cmd->add_option("--out", train_out, "Log path (default stdout)");
    train_cmd->add_option("--save", save_path, "Write the trained weights here");

    // analyze
    auto* analyze = app.add_subcommand("analyze", "Analysis pipelines");
    analyze->require_subcommand(1);
    std::string samples_path, maps_path, low_model, high_model;
    bool tertile_json = false;
    auto* tertiles = analyze->add_subcommand("tertiles", "Accuracy per relative-area tertile and %change");
    tertiles->add_option("--samples", samples_path, "Samples (JSON lines)")->required()->check(CLI::ExistingFile);
    tertiles->add_option("--low", low_model, "Low-resolution model id");
    tertiles->add_option("--high", high_model, "High-resolution model id");
    tertiles->add_flag("--json", tertile_json, "JSON instead of CSV");
    auto* attention = analyze->add_subcommand("attention", "Per-layer attention mass on global tokens");
    attention->add_option("--maps", maps_path, "Attention records (JSON lines)")->required()->check(CLI::ExistingFile);
    attention->add_option("--samples", samples_path, "Samples for a per-tertile breakdown")->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        if (*cost) {
            const CostReport report = make_cost_report(cost_in);
            std::cout << (cost_csv ? cost_report_csv(report) : cost_report_json(report));
            return 0;
        }
        if (*verify) {
            VerifyReport report;
            const auto sweep = toy_sweep();
            if (accounting != "full") report = run_verify(sweep, Accounting::formula);
            if (accounting != "formula") {
                auto full = run_verify(sweep, Accounting::full);
                report.rows.insert(report.rows.end(), full.rows.begin(), full.rows.end());
            }
            std::cout << report.json();
            return report.all_exact() ? 0 : 1;
        }
        if (*demo) {
            const ModelConfig cfg = read_model_config(config_path);
            Model model = build_model(cfg);
            if (!weights_path.empty()) apply_weights(model, load_weights(weights_path));
            const Image image = load_image(image_path);
            const std::vector<int> ids = parse_ids(prompt);

            MulLedger vision_ledger, lm_ledger;
            ForwardContext vctx{vision_ledger};
            const VisionTokens vision = model.encoder.encode(image, model.vit, vctx);
            ForwardContext lctx{lm_ledger};
            const Tensor logits = forward(model, ids, vision, lctx);

            nlohmann::ordered_json j;
            j["schema"] = "pheye.demo_forward/1";
            j["image"] = {{"height", image.height}, {"width", image.width}};
            j["tokens"] = {{"sub_images", cfg.vision.sub_image_count()},
                           {"per_sub_image", cfg.vision.tokens_per_image()},
                           {"global", vision.global_count},
                           {"local", vision.local_count},
                           {"total", vision.size()},
                           {"text", ids.size()}};
            j["logits"] = {{"shape", logits.shape()}, {"sha256", tensor_sha256(logits)}};
            j["ledger"] = {{"vision", ledger_json(vision_ledger)}, {"language", ledger_json(lm_ledger)}};
            std::cout << j.dump(2) << "\n";
            return 0;
        }
        if (*train_cmd) {
            ModelConfig mcfg = train_config.empty() ? ModelConfig{} : read_model_config(train_config);
            StageConfig scfg = StageConfig::preset(stage);
            scfg.total_steps = steps;
            scfg.seed = seed_flag ? *seed_flag : default_seed();
            if (lr_flag) scfg.learning_rate = *lr_flag;
            scfg.effective_batch = batch;
            scfg.micro_batch = micro;
            scfg.ablate_vision = ablate;
            if (train_config.empty()) mcfg.seed = scfg.seed;
            Model model = build_model(mcfg);
            SyntheticTask task;
            task.image_size = mcfg.vision.target_resolution;
            task.seed = scfg.seed;
            const TrainingLog log = train(model, task, scfg);
            write_out(train_out, log.jsonl());
            if (!save_path.empty()) save_weights(save_path, model);
            return log.frozen_unchanged() ? 0 : 1;
        }
        if (*tertiles) {
            const auto samples = read_samples_jsonl(samples_path);
            const auto [low, high] = pick_models(samples, low_model, high_model);
            const TertileTable table = tertile_accuracy_delta(samples, low, high);
            std::cout << (tertile_json ? table.json() : table.csv());
            return 0;
        }
        if (*attention) {
            const auto records = read_attention_jsonl(maps_path);
            if (records.empty()) throw InputError("no attention records in " + maps_path);
            const std::size_t g = records.front().global_count, l = records.front().local_count;
            AttentionSummary summary;
            if (samples_path.empty()) {
                summary = attention_aggregate(records, g, l);
            } else {
                std::vector<ScoredSample> scored;
                for (const auto& s : read_samples_jsonl(samples_path))
                    scored.push_back({s.id, relative_area(select_region(s).area, s.image_area)});
                summary = attention_aggregate(records, g, l, tertile_partition(scored));
            }
            std::cout << summary.csv();
            return 0;
        }
    } catch (const Error& e) {
        nlohmann::ordered_json j;
        j["error"] = {{"kind", e.kind()}, {"message", e.what()}};
        std::cerr << j.dump() << "\n";
        return 1;
    } catch (const std::exception& e) {
        nlohmann::ordered_json j;
        j["error"] = {{"kind", "internal"}, {"message", e.what()}};
        std::cerr << j.dump() << "\n";
        return 1;
    }
    return 2;
}
