#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pheye/decoder.hpp"

namespace pheye {

// ---------------------------------------------------------------------------
// Loss and updates
// ---------------------------------------------------------------------------
struct LossResult {
    Tensor loss;  // scalar, summed over output tokens
    std::size_t token_count = 0;
};

// Summed cross-entropy over positions with output_mask set.
LossResult loss_sum(const Tensor& logits, std::span<const int> targets, const std::vector<bool>& output_mask);

// Plain SGD over a fixed parameter list.
class Sgd {
public:
    explicit Sgd(std::vector<Tensor> params) : params_(std::move(params)) {}

    const std::vector<Tensor>& params() const { return params_; }
    // p -= lr * g, grads in parameter order.
    void apply(const std::vector<std::vector<double>>& grads, double lr);

private:
    std::vector<Tensor> params_;
};

// Divides the gradients accumulated on the optimizer's parameters by the total
// number of output tokens, applies the update and clears the gradients.
// Returns the gradients that were applied.
std::vector<std::vector<double>> accumulate_and_step(Sgd& optimizer, double lr, std::size_t token_count_total);

double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr);

// ---------------------------------------------------------------------------
// Synthetic rectangle task
// ---------------------------------------------------------------------------
namespace toy_vocab {
inline constexpr int pad = 0;
inline constexpr int bos = 1;
inline constexpr int eos = 2;
inline constexpr int ask_color = 3;
inline constexpr int ask_quadrant = 4;
inline constexpr int ask_both = 5;
inline constexpr int first_color = 6;     // red, green, blue
inline constexpr int first_quadrant = 9;  // top-left, top-right, bottom-left, bottom-right
inline constexpr int size = 13;
}  // namespace toy_vocab

struct TaskExample {
    Image image;
    std::vector<int> input_ids;  // BOS, question, answer (teacher forced)
    std::vector<int> targets;    // next token at each input position
    std::vector<bool> output_mask;
    int color = 0;
    int quadrant = 0;
};

// One saturated rectangle on a dark image. The answer (color, quadrant or
// both, then EOS) depends on the image alone.
struct SyntheticTask {
    std::size_t image_size = 56;
    std::size_t channels = 3;
    std::uint64_t seed = 0;

    TaskExample example(std::uint64_t index) const;
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------
struct StageConfig {
    int stage = 1;
    double learning_rate = 2e-4;
    std::size_t total_steps = 0;
    std::size_t effective_batch = 128;  // sequences per update
    std::size_t micro_batch = 8;        // sequences per backward pass
    std::uint64_t seed = 0;
    bool ablate_vision = false;  // zero the vision tokens (control run)
    std::size_t prefetch = 64;   // capacity of the data queue

    static StageConfig preset(int stage);
    void validate() const;
};

struct StepRecord {
    std::size_t step = 0;
    double lr = 0.0;
    double loss = 0.0;  // summed over the step
    std::size_t tokens = 0;
    std::size_t sequences = 0;

    double loss_per_token() const { return loss / static_cast<double>(tokens); }
};

using Checksums = std::map<std::string, std::string>;

struct TrainingLog {
    StageConfig config;
    std::vector<StepRecord> steps;
    Checksums frozen_start;
    Checksums frozen_end;
    std::size_t trainable_values = 0;

    // Mean per-token loss over steps [first, first + count).
    double mean_loss(std::size_t first, std::size_t count) const;
    bool frozen_unchanged() const { return frozen_start == frozen_end; }
    std::string jsonl() const;
};

// Hex SHA-256 of the shape and raw float64 bytes.
std::string tensor_sha256(const Tensor& t);
Checksums frozen_checksums(const Model& model);

using StepCallback = std::function<void(const StepRecord&)>;

TrainingLog train(Model& model, const SyntheticTask& task, const StageConfig& cfg, const StepCallback& on_step = {});

// Mean per-token loss on `count` examples starting at `first_index`, eval mode.
double evaluate(const Model& model, const SyntheticTask& task, std::uint64_t first_index, std::size_t count,
                bool ablate_vision = false);

// Forward + summed loss for one example.
LossResult example_loss(const Model& model, const TaskExample& example, ForwardContext& ctx, bool ablate_vision);

// ---------------------------------------------------------------------------
// Producer/consumer hand-off: push blocks while full, pop blocks while empty.
// After close(), push fails and pop drains what is left.
// ---------------------------------------------------------------------------
template <typename T>
class BoundedQueue {
public:
    explicit BoundedQueue(std::size_t capacity) : capacity_(capacity == 0 ? 1 : capacity) {}

    bool push(T value) {
        std::unique_lock lock(mu_);
        not_full_.wait(lock, [&] { return closed_ || items_.size() < capacity_; });
        if (closed_) return false;
        items_.push_back(std::move(value));
        not_empty_.notify_one();
        return true;
    }

    std::optional<T> pop() {
        std::unique_lock lock(mu_);
        not_empty_.wait(lock, [&] { return closed_ || !items_.empty(); });
        if (items_.empty()) return std::nullopt;
        T value = std::move(items_.front());
        items_.pop_front();
        not_full_.notify_one();
        return value;
    }

    void close() {
        std::lock_guard lock(mu_);
        closed_ = true;
        not_full_.notify_all();
        not_empty_.notify_all();
    }

    std::size_t capacity() const { return capacity_; }
    std::size_t size() const {
        std::lock_guard lock(mu_);
        return items_.size();
    }

private:
    std::size_t capacity_;
    mutable std::mutex mu_;
    std::condition_variable not_full_, not_empty_;
    std::deque<T> items_;
    bool closed_ = false;
};

}  // namespace pheye
