#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pheye/decoder.hpp"

namespace pheye {

// Ratcliff/Obershelp gestalt ratio 2*M/(|a|+|b|), case-folded. The matcher
// takes the longest common block (earliest in the first string, then the
// second, on ties) and recurses on both flanks. That tie rule is order
// dependent, so the result is the larger of the two argument orders.
double string_similarity(std::string_view a, std::string_view b);
// Matched character count M for one argument order.
std::size_t matching_characters(std::string_view a, std::string_view b);

struct Region {
    std::string label;
    double area = 0.0;
};

struct AnnotatedSample {
    std::string id;
    double image_area = 0.0;
    std::string question;
    std::vector<std::string> answers;
    std::vector<Region> regions;
    std::map<std::string, bool> correct;  // model id -> answered correctly

    void validate() const;
};

// True when every answer is yes/no or purely numeric (after trimming).
bool is_yes_no_or_numeric(const std::vector<std::string>& answers);

// Region whose label has the highest mean similarity to the answers (or to the
// question for yes/no and numeric answers). Ties go to the larger area, then
// the earlier region.
const Region& select_region(const AnnotatedSample& sample);

double relative_area(double region_area, double image_area);

struct ScoredSample {
    std::string id;
    double relative_area = 0.0;
};

struct TertilePartition {
    std::vector<std::string> bottom;  // smallest S, finer details
    std::vector<std::string> middle;
    std::vector<std::string> top;
    double lower_boundary = 0.0;  // largest S in bottom
    double upper_boundary = 0.0;  // largest S in middle
};

// Stable ascending sort by S, split at ceil(n/3) and ceil(2n/3).
TertilePartition tertile_partition(const std::vector<ScoredSample>& samples);

// 100 * (high - low) / low; nullopt when low is zero.
std::optional<double> relative_change(double low_accuracy, double high_accuracy);
// Two-decimal signed rendering, e.g. "+15.15"; "undefined" for nullopt.
std::string format_delta(std::optional<double> delta);

struct TertileRow {
    std::string model;
    double bottom = 0.0;
    double middle = 0.0;
    double top = 0.0;
};

struct TertileTable {
    TertilePartition partition;
    TertileRow low;
    TertileRow high;
    std::optional<double> delta_bottom, delta_middle, delta_top;

    std::string csv() const;
    std::string json() const;
};

// Accuracy (percent) per tertile of `low_model` and `high_model`, and %change.
TertileTable tertile_accuracy_delta(const std::vector<AnnotatedSample>& samples, const std::string& low_model,
                                    const std::string& high_model);

// ---------------------------------------------------------------------------
// Cross-attention aggregation
// ---------------------------------------------------------------------------

// [layer][step][head] -> distribution over the vision tokens
using AttentionMaps = std::vector<std::vector<std::vector<std::vector<double>>>>;

struct AttentionRecord {
    std::string sample_id;
    std::size_t global_count = 0;
    std::size_t local_count = 0;
    AttentionMaps maps;
};

AttentionRecord attention_record(const GenerationOutput& output, const VisionTokens& vision,
                                 std::string sample_id = {});

struct AttentionSummary {
    std::vector<double> global_mass;  // A_G per cross-attention layer
    // tertile name -> A_G per layer
    std::map<std::string, std::vector<double>> per_tertile;

    double local_mass(std::size_t layer) const { return 1.0 - global_mass.at(layer); }
    std::string csv() const;
};

// Per layer: mean over samples, steps and heads (each step weighted equally)
// of the attention mass on the first `global_count` tokens.
AttentionSummary attention_aggregate(const std::vector<AttentionRecord>& records, std::size_t global_count,
                                     std::size_t local_count);
// Adds the per-tertile breakdown using sample ids.
AttentionSummary attention_aggregate(const std::vector<AttentionRecord>& records, std::size_t global_count,
                                     std::size_t local_count, const TertilePartition& partition);

// ---------------------------------------------------------------------------
// JSON-lines I/O
// ---------------------------------------------------------------------------
std::vector<AnnotatedSample> read_samples_jsonl(const std::string& path);
std::vector<AnnotatedSample> parse_samples_jsonl(std::string_view text);
std::vector<AttentionRecord> read_attention_jsonl(const std::string& path);
std::vector<AttentionRecord> parse_attention_jsonl(std::string_view text);
std::string attention_record_json(const AttentionRecord& record);

}  // namespace pheye
