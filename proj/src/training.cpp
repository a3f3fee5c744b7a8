#include "pheye/training.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <cstring>
#include <json.hpp>
#include <numbers>
#include <thread>

namespace pheye {

// --- loss and updates -------------------------------------------------------

LossResult loss_sum(const Tensor& logits, std::span<const int> targets, const std::vector<bool>& output_mask) {
    std::size_t count = 0;
    for (bool m : output_mask) count += m ? 1 : 0;
    if (count == 0) throw InputError("loss_sum: output mask selects no tokens");
    return {cross_entropy_sum(logits, targets, output_mask), count};
}

void Sgd::apply(const std::vector<std::vector<double>>& grads, double lr) {
    if (grads.size() != params_.size()) throw ContractError("Sgd::apply: gradient count does not match parameters");
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto values = params_[i].mutable_data();
        if (grads[i].size() != values.size()) throw ContractError("Sgd::apply: gradient shape mismatch");
        for (std::size_t j = 0; j < values.size(); ++j) values[j] -= lr * grads[i][j];
    }
}

std::vector<std::vector<double>> accumulate_and_step(Sgd& optimizer, double lr, std::size_t token_count_total) {
    if (token_count_total == 0) throw ContractError("accumulate_and_step: zero output tokens");
    const double denom = static_cast<double>(token_count_total);
    std::vector<std::vector<double>> applied;
    applied.reserve(optimizer.params().size());
    for (const auto& p : optimizer.params()) {
        std::vector<double> g(p.numel(), 0.0);
        if (p.has_grad()) {
            auto acc = p.grad();
            for (std::size_t j = 0; j < g.size(); ++j) g[j] = acc[j] / denom;
        }
        applied.push_back(std::move(g));
    }
    optimizer.apply(applied, lr);
    for (auto p : optimizer.params()) p.zero_grad();
    return applied;
}

double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr) {
    if (total_steps == 0) throw ConfigError("cosine_lr: total_steps must be positive");
    if (step > total_steps) throw ContractError("cosine_lr: step beyond total_steps");
    const double t = static_cast<double>(step) / static_cast<double>(total_steps);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

// --- synthetic task ---------------------------------------------------------

TaskExample SyntheticTask::example(std::uint64_t index) const {
    if (image_size < 8 || image_size % 2 != 0) throw ConfigError("synthetic task needs an even image size >= 8");
    if (channels != 3) throw ConfigError("synthetic task draws RGB images");
    Rng rng(seed * 0x9E3779B97F4A7C15ULL + index + 1);

    TaskExample ex;
    ex.color = static_cast<int>(rng.uniform_index(3));
    ex.quadrant = static_cast<int>(rng.uniform_index(4));
    const int question = toy_vocab::ask_color + static_cast<int>(rng.uniform_index(3));

    ex.image = Image::filled(channels, image_size, image_size, 0.0);
    const std::size_t half = image_size / 2;
    const std::size_t min_side = std::max<std::size_t>(2, half / 3);
    const std::size_t h = min_side + rng.uniform_index(half - min_side);
    const std::size_t w = min_side + rng.uniform_index(half - min_side);
    const std::size_t top = (ex.quadrant / 2) * half + rng.uniform_index(half - h + 1);
    const std::size_t left = (ex.quadrant % 2) * half + rng.uniform_index(half - w + 1);
    for (std::size_t c = 0; c < channels; ++c) {
        const double value = static_cast<int>(c) == ex.color ? 1.0 : 0.1;
        for (std::size_t y = top; y < top + h; ++y)
            for (std::size_t x = left; x < left + w; ++x) ex.image.at(c, y, x) = value;
    }

    std::vector<int> answer;
    if (question != toy_vocab::ask_quadrant) answer.push_back(toy_vocab::first_color + ex.color);
    if (question != toy_vocab::ask_color) answer.push_back(toy_vocab::first_quadrant + ex.quadrant);
    answer.push_back(toy_vocab::eos);

    std::vector<int> full = {toy_vocab::bos, question};
    full.insert(full.end(), answer.begin(), answer.end());
    ex.input_ids.assign(full.begin(), full.end() - 1);
    ex.targets.assign(full.begin() + 1, full.end());
    ex.output_mask.assign(ex.targets.size(), false);
    for (std::size_t i = 1; i < ex.targets.size(); ++i) ex.output_mask[i] = true;  // position 0 predicts the question
    return ex;
}

// --- config -----------------------------------------------------------------

StageConfig StageConfig::preset(int stage) {
    StageConfig cfg;
    cfg.stage = stage;
    switch (stage) {
        case 1: cfg.learning_rate = 2e-4; break;
        case 2: cfg.learning_rate = 1e-4; break;
        case 3: cfg.learning_rate = 5e-5; break;
        default: throw ConfigError("stage must be 1, 2 or 3, got " + std::to_string(stage));
    }
    return cfg;
}

void StageConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be >= 0");
    if (micro_batch == 0 || effective_batch == 0) throw ConfigError("batch sizes must be positive");
    if (micro_batch > effective_batch) throw ConfigError("micro_batch exceeds effective_batch");
    if (effective_batch % micro_batch != 0) throw ConfigError("effective_batch must be divisible by micro_batch");
}

// --- checksums --------------------------------------------------------------

std::string tensor_sha256(const Tensor& t) {
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx) throw std::runtime_error("EVP_MD_CTX_new failed");
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    for (std::size_t d : t.shape()) {
        const std::uint64_t dim = d;
        EVP_DigestUpdate(ctx, &dim, sizeof dim);
    }
    const auto data = t.data();
    EVP_DigestUpdate(ctx, data.data(), data.size() * sizeof(double));
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 15];
    }
    return out;
}

Checksums frozen_checksums(const Model& model) {
    Checksums out;
    for (const auto& p : model.frozen_parameters()) out[p.name] = tensor_sha256(p.tensor);
    return out;
}

// --- training ---------------------------------------------------------------

namespace {

VisionTokens zero_vision(const Model& model) {
    const auto& g = model.vision_geom;
    VisionTokens v;
    v.tokens = Tensor::zeros({g.total_tokens(), g.d_model});
    v.global_count = g.tokens_per_image();
    v.local_count = g.total_tokens() - v.global_count;
    for (std::size_t i = 0; i < g.sub_image_count(); ++i)
        for (std::size_t t = 0; t < g.tokens_per_image(); ++t) v.origin.push_back({static_cast<int>(i) - 1});
    return v;
}

}  // namespace

LossResult example_loss(const Model& model, const TaskExample& example, ForwardContext& ctx, bool ablate_vision) {
    const VisionTokens vision =
        ablate_vision ? zero_vision(model) : model.encoder.encode(example.image, model.vit, ctx);
    const Tensor logits = forward(model, example.input_ids, vision, ctx);
    return loss_sum(logits, example.targets, example.output_mask);
}

double TrainingLog::mean_loss(std::size_t first, std::size_t count) const {
    if (count == 0 || first + count > steps.size()) throw ContractError("mean_loss: range outside the log");
    double total = 0.0;
    for (std::size_t i = first; i < first + count; ++i) total += steps[i].loss_per_token();
    return total / static_cast<double>(count);
}

std::string TrainingLog::jsonl() const {
    std::string out;
    nlohmann::ordered_json head;
    head["type"] = "config";
    head["schema"] = "pheye.train_log/1";
    head["stage"] = config.stage;
    head["learning_rate"] = config.learning_rate;
    head["total_steps"] = config.total_steps;
    head["effective_batch"] = config.effective_batch;
    head["micro_batch"] = config.micro_batch;
    head["seed"] = config.seed;
    head["ablate_vision"] = config.ablate_vision;
    head["trainable_values"] = trainable_values;
    out += head.dump() + "\n";
    for (const auto& s : steps) {
        nlohmann::ordered_json j;
        j["type"] = "step";
        j["step"] = s.step;
        j["lr"] = s.lr;
        j["loss"] = s.loss;
        j["tokens"] = s.tokens;
        j["sequences"] = s.sequences;
        j["loss_per_token"] = s.loss_per_token();
        out += j.dump() + "\n";
    }
    nlohmann::ordered_json tail;
    tail["type"] = "summary";
    tail["steps"] = steps.size();
    tail["frozen_unchanged"] = frozen_unchanged();
    tail["frozen_sha256"] = frozen_end;
    out += tail.dump() + "\n";
    return out;
}

TrainingLog train(Model& model, const SyntheticTask& task, const StageConfig& cfg, const StepCallback& on_step) {
    cfg.validate();
    if (model.decoder_geom.vocab_size < static_cast<std::size_t>(toy_vocab::size)) {
        throw ConfigError("decoder vocabulary too small for the synthetic task");
    }
    if (task.image_size != model.vision_geom.target_resolution) {
        throw ConfigError("synthetic images must match the target resolution");
    }

    TrainingLog log;
    log.config = cfg;
    log.frozen_start = frozen_checksums(model);

    std::vector<Tensor> params;
    for (const auto& p : model.trainable_parameters()) {
        params.push_back(p.tensor);
        log.trainable_values += p.tensor.numel();
    }
    Sgd optimizer(std::move(params));
    model.zero_grad();

    if (cfg.total_steps > 0) {
        const std::uint64_t total_examples = static_cast<std::uint64_t>(cfg.total_steps) * cfg.effective_batch;
        BoundedQueue<TaskExample> queue(cfg.prefetch);
        std::thread producer([&queue, &task, total_examples] {
            for (std::uint64_t i = 0; i < total_examples; ++i)
                if (!queue.push(task.example(i))) return;
        });
        struct Joiner {
            BoundedQueue<TaskExample>& q;
            std::thread& t;
            ~Joiner() {
                q.close();
                t.join();
            }
        } joiner{queue, producer};

        MulLedger ledger;
        for (std::size_t step = 0; step < cfg.total_steps; ++step) {
            StepRecord rec;
            rec.step = step;
            rec.lr = cosine_lr(step, cfg.total_steps, cfg.learning_rate);
            for (std::size_t start = 0; start < cfg.effective_batch; start += cfg.micro_batch) {
                Tensor micro_loss;
                for (std::size_t i = 0; i < cfg.micro_batch; ++i) {
                    auto ex = queue.pop();
                    if (!ex) throw TrainingError("data queue closed early");
                    ForwardContext ctx{ledger, true, &model.dropout_rng};
                    LossResult r = example_loss(model, *ex, ctx, cfg.ablate_vision);
                    rec.tokens += r.token_count;
                    micro_loss = micro_loss.defined() ? add(micro_loss, r.loss) : r.loss;
                }
                const double value = micro_loss.item();
                if (!std::isfinite(value)) {
                    throw TrainingError("loss became " + std::to_string(value) + " at step " + std::to_string(step) +
                                        " (lr " + std::to_string(rec.lr) + ")");
                }
                rec.loss += value;
                micro_loss.backward();
                ledger.reset();
            }
            rec.sequences = cfg.effective_batch;
            accumulate_and_step(optimizer, rec.lr, rec.tokens);
            log.steps.push_back(rec);
            if (on_step) on_step(rec);
        }
    }

    log.frozen_end = frozen_checksums(model);
    return log;
}

double evaluate(const Model& model, const SyntheticTask& task, std::uint64_t first_index, std::size_t count,
                bool ablate_vision) {
    if (count == 0) throw InputError("evaluate needs at least one example");
    MulLedger ledger;
    ForwardContext ctx{ledger};
    double loss = 0.0;
    std::size_t tokens = 0;
    for (std::size_t i = 0; i < count; ++i) {
        const LossResult r = example_loss(model, task.example(first_index + i), ctx, ablate_vision);
        loss += r.loss.item();
        tokens += r.token_count;
    }
    return loss / static_cast<double>(tokens);
}

}  // namespace pheye
