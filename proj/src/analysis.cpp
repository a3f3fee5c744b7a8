#include "pheye/analysis.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>
#include <tuple>

namespace pheye {

namespace {

std::string fold(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::string trim(std::string_view s) {
    auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

struct Block {
    std::size_t a = 0, b = 0, size = 0;
};

// Longest common block of a[alo, ahi) and b[blo, bhi); earliest start in a,
// then in b, wins ties.
Block longest_block(const std::string& a, const std::string& b, std::size_t alo, std::size_t ahi, std::size_t blo,
                    std::size_t bhi) {
    Block best{alo, blo, 0};
    const std::size_t width = bhi - blo;
    std::vector<std::size_t> prev(width + 1, 0), cur(width + 1, 0);
    for (std::size_t i = alo; i < ahi; ++i) {
        for (std::size_t j = blo; j < bhi; ++j) {
            const std::size_t col = j - blo + 1;
            cur[col] = a[i] == b[j] ? prev[col - 1] + 1 : 0;
            if (cur[col] > best.size) best = {i + 1 - cur[col], j + 1 - cur[col], cur[col]};
        }
        std::swap(prev, cur);
        std::fill(cur.begin(), cur.end(), 0);
    }
    return best;
}

std::size_t match_count(const std::string& a, const std::string& b) {
    std::size_t matched = 0;
    std::vector<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t>> pending{{0, a.size(), 0, b.size()}};
    while (!pending.empty()) {
        const auto [alo, ahi, blo, bhi] = pending.back();
        pending.pop_back();
        if (alo >= ahi || blo >= bhi) continue;
        const Block blk = longest_block(a, b, alo, ahi, blo, bhi);
        if (blk.size == 0) continue;
        matched += blk.size;
        pending.emplace_back(alo, blk.a, blo, blk.b);
        pending.emplace_back(blk.a + blk.size, ahi, blk.b + blk.size, bhi);
    }
    return matched;
}

std::string format_two(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

}  // namespace

// --- similarity -------------------------------------------------------------

std::size_t matching_characters(std::string_view a, std::string_view b) { return match_count(fold(a), fold(b)); }

double string_similarity(std::string_view a, std::string_view b) {
    const std::size_t total = a.size() + b.size();
    if (total == 0) return 1.0;
    const std::string fa = fold(a), fb = fold(b);
    const std::size_t matched = std::max(match_count(fa, fb), match_count(fb, fa));
    return 2.0 * static_cast<double>(matched) / static_cast<double>(total);
}

// --- samples ----------------------------------------------------------------

void AnnotatedSample::validate() const {
    if (regions.empty()) throw InputError("sample '" + id + "' has no regions");
    if (answers.empty()) throw InputError("sample '" + id + "' has no answers");
    if (!(image_area > 0.0)) throw InputError("sample '" + id + "' has non-positive image area");
    for (const auto& r : regions) {
        if (!(r.area > 0.0) || r.area > image_area) {
            throw InputError("sample '" + id + "' region '" + r.label + "' has area outside (0, image_area]");
        }
    }
}

bool is_yes_no_or_numeric(const std::vector<std::string>& answers) {
    if (answers.empty()) return false;
    for (const auto& raw : answers) {
        const std::string a = fold(trim(raw));
        if (a == "yes" || a == "no") continue;
        if (a.empty()) return false;
        std::size_t dots = 0;
        for (char c : a) {
            if (c == '.') {
                ++dots;
            } else if (!std::isdigit(static_cast<unsigned char>(c))) {
                return false;
            }
        }
        if (dots > 1 || a == ".") return false;
    }
    return true;
}

const Region& select_region(const AnnotatedSample& sample) {
    if (sample.regions.empty()) throw InputError("sample '" + sample.id + "' has no regions");
    std::vector<std::string> targets =
        is_yes_no_or_numeric(sample.answers) ? std::vector<std::string>{sample.question} : sample.answers;
    if (targets.empty()) throw InputError("sample '" + sample.id + "' has no answers");

    const Region* best = nullptr;
    double best_score = -1.0;
    for (const auto& region : sample.regions) {
        double total = 0.0;
        for (const auto& t : targets) total += string_similarity(region.label, t);
        const double score = total / static_cast<double>(targets.size());
        if (!best || score > best_score || (score == best_score && region.area > best->area)) {
            best = &region;
            best_score = score;
        }
    }
    return *best;
}

double relative_area(double region_area, double image_area) {
    if (!(image_area > 0.0)) throw InputError("image area must be positive");
    if (!(region_area > 0.0)) throw InputError("region area must be positive");
    if (region_area > image_area) throw InputError("region area exceeds image area");
    return region_area / image_area;
}

TertilePartition tertile_partition(const std::vector<ScoredSample>& samples) {
    const std::size_t n = samples.size();
    if (n < 3) throw InputError("tertile partition needs at least 3 samples, got " + std::to_string(n));
    std::vector<ScoredSample> sorted = samples;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const ScoredSample& x, const ScoredSample& y) { return x.relative_area < y.relative_area; });
    const std::size_t cut1 = (n + 2) / 3;
    const std::size_t cut2 = (2 * n + 2) / 3;
    TertilePartition p;
    for (std::size_t i = 0; i < n; ++i) {
        auto& bucket = i < cut1 ? p.bottom : (i < cut2 ? p.middle : p.top);
        bucket.push_back(sorted[i].id);
    }
    p.lower_boundary = sorted[cut1 - 1].relative_area;
    p.upper_boundary = sorted[cut2 - 1].relative_area;
    return p;
}

std::optional<double> relative_change(double low_accuracy, double high_accuracy) {
    if (low_accuracy < 0.0 || low_accuracy > 100.0 || high_accuracy < 0.0 || high_accuracy > 100.0) {
        throw InputError("accuracies must lie in [0, 100]");
    }
    if (low_accuracy == 0.0) return std::nullopt;
    return 100.0 * (high_accuracy - low_accuracy) / low_accuracy;
}

std::string format_delta(std::optional<double> delta) {
    if (!delta) return "undefined";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%+.2f", *delta);
    return buf;
}

std::string TertileTable::csv() const {
    std::ostringstream out;
    out << "model,bottom,middle,top\n";
    for (const auto* row : {&low, &high}) {
        out << row->model << ',' << format_two(row->bottom) << ',' << format_two(row->middle) << ','
            << format_two(row->top) << '\n';
    }
    out << "%delta," << format_delta(delta_bottom) << ',' << format_delta(delta_middle) << ','
        << format_delta(delta_top) << '\n';
    return out.str();
}

std::string TertileTable::json() const {
    auto row = [](const TertileRow& r) {
        return nlohmann::ordered_json{{"model", r.model}, {"bottom", r.bottom}, {"middle", r.middle}, {"top", r.top}};
    };
    nlohmann::ordered_json j;
    j["schema"] = "pheye.tertiles/1";
    j["sizes"] = {partition.bottom.size(), partition.middle.size(), partition.top.size()};
    j["boundaries"] = {partition.lower_boundary, partition.upper_boundary};
    j["rows"] = {row(low), row(high)};
    j["delta"] = {format_delta(delta_bottom), format_delta(delta_middle), format_delta(delta_top)};
    return j.dump(2) + "\n";
}

TertileTable tertile_accuracy_delta(const std::vector<AnnotatedSample>& samples, const std::string& low_model,
                                    const std::string& high_model) {
    std::vector<ScoredSample> scored;
    std::map<std::string, const AnnotatedSample*> by_id;
    for (const auto& s : samples) {
        s.validate();
        if (!by_id.emplace(s.id, &s).second) throw InputError("duplicate sample id '" + s.id + "'");
        for (const auto* model : {&low_model, &high_model}) {
            if (!s.correct.contains(*model)) {
                throw ContractError("sample '" + s.id + "' has no correctness flag for model '" + *model + "'");
            }
        }
        scored.push_back({s.id, relative_area(select_region(s).area, s.image_area)});
    }
    TertileTable t;
    t.partition = tertile_partition(scored);
    auto accuracy = [&](const std::vector<std::string>& ids, const std::string& model) {
        std::size_t hits = 0;
        for (const auto& id : ids) hits += by_id.at(id)->correct.at(model) ? 1 : 0;
        return 100.0 * static_cast<double>(hits) / static_cast<double>(ids.size());
    };
    for (auto [row, model] : {std::pair{&t.low, &low_model}, std::pair{&t.high, &high_model}}) {
        row->model = *model;
        row->bottom = accuracy(t.partition.bottom, *model);
        row->middle = accuracy(t.partition.middle, *model);
        row->top = accuracy(t.partition.top, *model);
    }
    t.delta_bottom = relative_change(t.low.bottom, t.high.bottom);
    t.delta_middle = relative_change(t.low.middle, t.high.middle);
    t.delta_top = relative_change(t.low.top, t.high.top);
    return t;
}

// --- attention --------------------------------------------------------------

AttentionRecord attention_record(const GenerationOutput& output, const VisionTokens& vision, std::string sample_id) {
    return {std::move(sample_id), vision.global_count, vision.local_count, output.cross_attention};
}

namespace {

struct MassAccumulator {
    std::vector<double> sum;
    std::vector<std::size_t> count;
};

void accumulate(MassAccumulator& acc, const AttentionRecord& r, std::size_t global_count) {
    if (acc.sum.empty()) {
        acc.sum.assign(r.maps.size(), 0.0);
        acc.count.assign(r.maps.size(), 0);
    }
    for (std::size_t layer = 0; layer < r.maps.size(); ++layer) {
        for (const auto& step : r.maps[layer]) {
            for (const auto& head : step) {
                double mass = 0.0;
                for (std::size_t t = 0; t < global_count; ++t) mass += head[t];
                acc.sum[layer] += mass;
                acc.count[layer] += 1;
            }
        }
    }
}

std::vector<double> finish(const MassAccumulator& acc) {
    std::vector<double> out(acc.sum.size(), 0.0);
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (acc.count[i] == 0) throw ContractError("no attention rows recorded for layer " + std::to_string(i));
        out[i] = acc.sum[i] / static_cast<double>(acc.count[i]);
    }
    return out;
}

void check_record(const AttentionRecord& r, std::size_t global_count, std::size_t local_count,
                  std::size_t expected_layers) {
    if (r.global_count != global_count || r.local_count != local_count) {
        throw ContractError("record '" + r.sample_id + "' has token counts (" + std::to_string(r.global_count) + ", " +
                            std::to_string(r.local_count) + "), expected (" + std::to_string(global_count) + ", " +
                            std::to_string(local_count) + ")");
    }
    if (r.maps.size() != expected_layers) {
        throw ContractError("record '" + r.sample_id + "' has " + std::to_string(r.maps.size()) +
                            " cross-attention layers, expected " + std::to_string(expected_layers));
    }
    const std::size_t total = global_count + local_count;
    for (const auto& layer : r.maps)
        for (const auto& step : layer)
            for (const auto& head : step)
                if (head.size() != total) {
                    throw ContractError("record '" + r.sample_id + "' has a map of length " +
                                        std::to_string(head.size()) + ", expected " + std::to_string(total));
                }
}

}  // namespace

AttentionSummary attention_aggregate(const std::vector<AttentionRecord>& records, std::size_t global_count,
                                     std::size_t local_count) {
    if (records.empty()) throw InputError("attention aggregation needs at least one record");
    MassAccumulator acc;
    for (const auto& r : records) {
        check_record(r, global_count, local_count, records.front().maps.size());
        accumulate(acc, r, global_count);
    }
    return {finish(acc), {}};
}

AttentionSummary attention_aggregate(const std::vector<AttentionRecord>& records, std::size_t global_count,
                                     std::size_t local_count, const TertilePartition& partition) {
    AttentionSummary summary = attention_aggregate(records, global_count, local_count);
    const std::array<std::pair<const char*, const std::vector<std::string>*>, 3> groups = {
        {{"bottom", &partition.bottom}, {"middle", &partition.middle}, {"top", &partition.top}}};
    for (const auto& [name, ids] : groups) {
        const std::set<std::string> members(ids->begin(), ids->end());
        MassAccumulator acc;
        for (const auto& r : records)
            if (members.contains(r.sample_id)) accumulate(acc, r, global_count);
        if (!acc.sum.empty()) summary.per_tertile[name] = finish(acc);
    }
    return summary;
}

std::string AttentionSummary::csv() const {
    std::ostringstream out;
    out.precision(12);
    out << "layer,a_global,a_local";
    for (const auto& [name, _] : per_tertile) out << ",a_global_" << name;
    out << '\n';
    for (std::size_t layer = 0; layer < global_mass.size(); ++layer) {
        out << layer << ',' << global_mass[layer] << ',' << local_mass(layer);
        for (const auto& [_, series] : per_tertile) out << ',' << series.at(layer);
        out << '\n';
    }
    return out.str();
}

// --- JSON lines -------------------------------------------------------------

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

template <typename F>
void for_each_json_line(std::string_view text, F&& handle) {
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t end = std::min(text.find('\n', pos), text.size());
        const std::string line = trim(text.substr(pos, end - pos));
        ++line_no;
        pos = end + 1;
        if (line.empty()) continue;
        try {
            handle(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception& e) {
            throw InputError("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
}

AnnotatedSample sample_from_json(const nlohmann::json& j) {
    AnnotatedSample s;
    s.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
    if (j.contains("image_area")) {
        s.image_area = j.at("image_area").get<double>();
    } else {
        s.image_area = j.at("image_width").get<double>() * j.at("image_height").get<double>();
    }
    s.question = j.value("question", std::string{});
    s.answers = j.at("answers").get<std::vector<std::string>>();
    for (const auto& r : j.at("regions")) {
        Region region;
        region.label = r.at("label").get<std::string>();
        if (r.contains("area")) {
            region.area = r.at("area").get<double>();
        } else {
            const auto box = r.at("bbox").get<std::vector<double>>();  // [x, y, w, h]
            if (box.size() != 4) throw InputError("bbox must have 4 entries");
            region.area = box[2] * box[3];
        }
        s.regions.push_back(std::move(region));
    }
    if (j.contains("correct")) s.correct = j.at("correct").get<std::map<std::string, bool>>();
    s.validate();
    return s;
}

}  // namespace

std::vector<AnnotatedSample> parse_samples_jsonl(std::string_view text) {
    std::vector<AnnotatedSample> out;
    for_each_json_line(text, [&out](const nlohmann::json& j) { out.push_back(sample_from_json(j)); });
    return out;
}

std::vector<AnnotatedSample> read_samples_jsonl(const std::string& path) { return parse_samples_jsonl(slurp(path)); }

std::vector<AttentionRecord> parse_attention_jsonl(std::string_view text) {
    std::vector<AttentionRecord> out;
    for_each_json_line(text, [&out](const nlohmann::json& j) {
        AttentionRecord r;
        r.sample_id = j.value("sample_id", std::string{});
        r.global_count = j.at("global_count").get<std::size_t>();
        r.local_count = j.at("local_count").get<std::size_t>();
        r.maps = j.at("layers").get<AttentionMaps>();
        out.push_back(std::move(r));
    });
    return out;
}

std::vector<AttentionRecord> read_attention_jsonl(const std::string& path) {
    return parse_attention_jsonl(slurp(path));
}

std::string attention_record_json(const AttentionRecord& r) {
    nlohmann::ordered_json j;
    j["sample_id"] = r.sample_id;
    j["global_count"] = r.global_count;
    j["local_count"] = r.local_count;
    j["layers"] = r.maps;
    return j.dump();
}

}  // namespace pheye
