#include <doctest.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <json.hpp>
#include <set>
#include <sstream>
#include <thread>

#include "pheye/config.hpp"
#include "pheye/errors.hpp"
#include "pheye/training.hpp"

using namespace pheye;

namespace {

// -log softmax(row)[target], computed directly.
double nll_ref(std::span<const double> row, int target) {
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double z = 0;
    for (double v : row) z += std::exp(v - mx);
    return -(row[target] - mx - std::log(z));
}

ModelConfig small_config() {
    ModelConfig cfg;
    cfg.decoder.d_model = 8;
    cfg.decoder.layers = 2;
    cfg.decoder.interval = 1;
    cfg.vision.d_model = 8;
    cfg.vision.layers = 1;
    cfg.seed = 4;
    return cfg;
}

// Per-sequence loss for a one-matrix linear model; each sequence has its own
// token count.
Tensor seq_loss(const Tensor& w, const Tensor& x, std::span<const int> targets, MulLedger& ledger) {
    const Tensor logits = matmul(x, w, MulCategory::other, ledger);
    return cross_entropy_sum(logits, targets, std::vector<bool>(targets.size(), true));
}

}  // namespace

TEST_CASE("summed loss") {
    const std::size_t v = 13;
    const Tensor flat = Tensor::zeros({2, v});
    const std::vector<int> t = {4, 7};
    const auto one = loss_sum(flat, t, {true, false});
    CHECK(one.token_count == 1);
    CHECK(one.loss.item() == doctest::Approx(std::log(13.0)).epsilon(1e-14));
    const auto two = loss_sum(flat, t, {true, true});
    CHECK(two.token_count == 2);
    CHECK(two.loss.item() == doctest::Approx(2 * std::log(13.0)).epsilon(1e-14));
    CHECK_THROWS_AS(loss_sum(flat, t, {false, false}), InputError);
}

TEST_CASE("summed loss matches a scalar loop") {
    Rng rng(8);
    const Tensor logits = Tensor::randn({6, 5}, rng, 3.0);
    const std::vector<int> t = {0, 4, 2, 2, 1, 3};
    const std::vector<bool> mask = {true, false, true, true, false, true};
    double ref = 0;
    for (std::size_t i = 0; i < 6; ++i)
        if (mask[i]) ref += nll_ref(logits.data().subspan(i * 5, 5), t[i]);
    CHECK(std::abs(loss_sum(logits, t, mask).loss.item() - ref) < 1e-12);
}

TEST_CASE("accumulated gradients are divided by the token count") {
    Tensor p = Tensor::scalar(3.0, true);
    scale(p, 2.0).backward();
    Sgd opt({p});
    const auto applied = accumulate_and_step(opt, 1.0, 4);
    CHECK(applied[0][0] == 0.5);
    CHECK(p.item() == 2.5);
    CHECK(p.grad()[0] == 0.0);
    CHECK_THROWS_AS(accumulate_and_step(opt, 1.0, 0), ContractError);
}

TEST_CASE("micro-batch split does not change the update") {
    Rng rng(9);
    const std::vector<std::size_t> lengths = {1, 3, 2, 5, 4, 1};
    std::vector<Tensor> xs;
    std::vector<std::vector<int>> ts;
    std::size_t tokens = 0;
    for (auto n : lengths) {
        xs.push_back(Tensor::randn({n, 4}, rng, 1.0));
        std::vector<int> t;
        for (std::size_t i = 0; i < n; ++i) t.push_back(static_cast<int>(rng.uniform_index(3)));
        ts.push_back(t);
        tokens += n;
    }
    const Tensor init = Tensor::randn({4, 3}, rng, 0.5);
    MulLedger ledger;

    auto run = [&](std::size_t micro) {
        Tensor w = Tensor::from({4, 3}, init.to_vector(), true);
        Sgd opt({w});
        for (std::size_t s = 0; s < xs.size(); s += micro) {
            Tensor total;
            for (std::size_t i = s; i < std::min(s + micro, xs.size()); ++i) {
                const Tensor l = seq_loss(w, xs[i], ts[i], ledger);
                total = total.defined() ? add(total, l) : l;
            }
            total.backward();
        }
        return accumulate_and_step(opt, 0.1, tokens)[0];
    };
    const auto whole = run(6);
    for (std::size_t micro : {1, 2, 3}) {
        const auto split = run(micro);
        for (std::size_t k = 0; k < whole.size(); ++k) CHECK(std::abs(split[k] - whole[k]) < 1e-12);
    }
}

TEST_CASE("per-token normalization differs from averaging per-sequence means") {
    Rng rng(10);
    const Tensor x1 = Tensor::randn({1, 4}, rng, 1.0), x3 = Tensor::randn({3, 4}, rng, 1.0);
    const std::vector<int> t1 = {1}, t3 = {0, 2, 1};
    MulLedger ledger;
    Tensor w = Tensor::randn({4, 3}, rng, 0.5, true);
    Sgd opt({w});

    seq_loss(w, x1, t1, ledger).backward();
    const auto g1 = std::vector<double>(w.grad().begin(), w.grad().end());
    w.zero_grad();
    seq_loss(w, x3, t3, ledger).backward();
    const auto g3 = std::vector<double>(w.grad().begin(), w.grad().end());
    w.zero_grad();

    seq_loss(w, x1, t1, ledger).backward();
    seq_loss(w, x3, t3, ledger).backward();
    const auto per_token = accumulate_and_step(opt, 0.0, 4)[0];
    double gap = 0;
    for (std::size_t k = 0; k < g1.size(); ++k) {
        CHECK(std::abs(per_token[k] - (g1[k] + g3[k]) / 4) < 1e-14);
        gap = std::max(gap, std::abs(per_token[k] - (g1[k] / 1 + g3[k] / 3) / 2));
    }
    CHECK(gap > 1e-6);
}

TEST_CASE("cosine schedule") {
    CHECK(cosine_lr(0, 100, 1e-4) == 1e-4);
    CHECK(cosine_lr(50, 100, 1e-4) == doctest::Approx(5e-5).epsilon(1e-12));
    CHECK(cosine_lr(100, 100, 1e-4) == doctest::Approx(0.0));
    CHECK(cosine_lr(25, 100, 1.0) == doctest::Approx(0.5 * (1 + std::cos(M_PI / 4))));
    CHECK_THROWS_AS(cosine_lr(0, 0, 1e-4), ConfigError);
    CHECK_THROWS_AS(cosine_lr(101, 100, 1e-4), ContractError);
}

TEST_CASE("stage presets") {
    CHECK(StageConfig::preset(1).learning_rate == 2e-4);
    CHECK(StageConfig::preset(2).learning_rate == 1e-4);
    CHECK(StageConfig::preset(3).learning_rate == 5e-5);
    CHECK(StageConfig::preset(2).stage == 2);
    CHECK_THROWS_AS(StageConfig::preset(4), ConfigError);
    StageConfig cfg;
    cfg.micro_batch = 3;
    cfg.effective_batch = 8;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.micro_batch = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("synthetic task") {
    SyntheticTask task;
    task.seed = 3;
    const auto a = task.example(5), b = task.example(5);
    CHECK(a.image.pixels == b.image.pixels);
    CHECK(a.input_ids == b.input_ids);
    SyntheticTask other = task;
    other.seed = 4;
    bool differs = false;
    std::set<std::size_t> lengths;
    for (std::uint64_t i = 0; i < 20; ++i) {
        const auto ex = task.example(i);
        differs = differs || ex.image.pixels != other.example(i).image.pixels;
        lengths.insert(ex.input_ids.size());
        CHECK(ex.input_ids.front() == toy_vocab::bos);
        CHECK(ex.targets.back() == toy_vocab::eos);
        CHECK_FALSE(ex.output_mask.front());
        for (int t : ex.targets) CHECK(t < toy_vocab::size);
    }
    CHECK(differs);
    CHECK(lengths.size() == 2);
    task.image_size = 7;
    CHECK_THROWS_AS(task.example(0), ConfigError);
}

TEST_CASE("bounded queue blocks the producer when full") {
    BoundedQueue<int> q(2);
    std::atomic<int> pushed{0};
    std::thread producer([&] {
        for (int i = 0; i < 5; ++i) {
            q.push(i);
            ++pushed;
        }
    });
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    CHECK(pushed.load() == 2);
    CHECK(q.size() == 2);
    for (int i = 0; i < 5; ++i) CHECK(q.pop() == i);
    producer.join();
    q.push(7);
    q.close();
    CHECK_FALSE(q.push(8));
    CHECK(q.pop() == 7);
    CHECK_FALSE(q.pop().has_value());
}

TEST_CASE("zero steps leave the model untouched") {
    Model m = build_model(small_config());
    std::vector<std::string> before;
    for (const auto& p : m.named_parameters()) before.push_back(tensor_sha256(p.tensor));
    StageConfig cfg;
    cfg.effective_batch = 4;
    cfg.micro_batch = 2;
    SyntheticTask task;
    const auto log = train(m, task, cfg);
    CHECK(log.steps.empty());
    CHECK(log.frozen_unchanged());
    std::vector<std::string> after;
    for (const auto& p : m.named_parameters()) after.push_back(tensor_sha256(p.tensor));
    CHECK(before == after);
}

TEST_CASE("a few steps move the trainable set only") {
    Model m = build_model(small_config());
    Checksums trainable_before;
    for (const auto& p : m.trainable_parameters()) trainable_before[p.name] = tensor_sha256(p.tensor);
    StageConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.total_steps = 3;
    cfg.effective_batch = 4;
    cfg.micro_batch = 2;
    cfg.seed = 2;
    SyntheticTask task;
    task.seed = 2;
    std::size_t callbacks = 0;
    const auto log = train(m, task, cfg, [&](const StepRecord&) { ++callbacks; });
    CHECK(callbacks == 3);
    CHECK(log.frozen_unchanged());
    CHECK(log.frozen_start.size() == m.frozen_parameters().size());
    std::size_t changed = 0;
    for (const auto& p : m.trainable_parameters()) changed += trainable_before[p.name] != tensor_sha256(p.tensor);
    CHECK(changed > 0);
    for (const auto& s : log.steps) {
        CHECK(s.sequences == 4);
        CHECK(std::isfinite(s.loss));
    }

    std::istringstream lines(log.jsonl());
    std::string line;
    std::vector<nlohmann::json> parsed;
    while (std::getline(lines, line)) parsed.push_back(nlohmann::json::parse(line));
    REQUIRE(parsed.size() == 5);
    CHECK(parsed.front()["schema"] == "pheye.train_log/1");
    CHECK(parsed.back()["type"] == "summary");
    CHECK(parsed.back()["frozen_unchanged"] == true);
}

TEST_CASE("training checks the model against the task") {
    ModelConfig cfg = small_config();
    cfg.decoder.vocab_size = 12;
    Model m = build_model(cfg);
    StageConfig sc;
    sc.total_steps = 1;
    sc.effective_batch = 2;
    sc.micro_batch = 1;
    CHECK_THROWS_AS(train(m, SyntheticTask{}, sc), ConfigError);
    Model ok = build_model(small_config());
    SyntheticTask wrong;
    wrong.image_size = 84;
    CHECK_THROWS_AS(train(ok, wrong, sc), ConfigError);
}
