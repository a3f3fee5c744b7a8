#include "pheye/config.hpp"

#include <charconv>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace pheye {

namespace {

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return std::string(s.substr(first, last - first + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T value{};
    const char* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc{} || ptr != end) throw ConfigError("config key '" + key + "': bad value '" + text + "'");
    return value;
}

using Setter = std::function<void(ModelConfig&, const std::string&, const std::string&)>;

template <typename T, typename Field>
Setter set(Field field) {
    return [field](ModelConfig& c, const std::string& key, const std::string& v) {
        std::invoke(field, c) = parse_number<T>(key, v);
    };
}

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"seed", set<std::uint64_t>([](ModelConfig& c) -> std::uint64_t& { return c.seed; })},
        {"decoder.d_model", set<std::size_t>([](ModelConfig& c) -> std::size_t& { return c.decoder.d_model; })},
        {"decoder.layers", set<std::size_t>([](ModelConfig& c) -> std::size_t& { return c.decoder.layers; })},
        {"decoder.heads", set<std::size_t>([](ModelConfig& c) -> std::size_t& { return c.decoder.heads; })},
        {"decoder.vocab_size", set<std::size_t>([](ModelConfig& c) -> std::size_t& { return c.decoder.vocab_size; })},
        {"decoder.interval", set<std::size_t>([](ModelConfig& c) -> std::size_t& { return c.decoder.interval; })},
        {"decoder.max_text_len",
         set<std::size_t>([](ModelConfig& c) -> std::size_t& { return c.decoder.max_text_len; })},
        {"vit.base_resolution",
         set<std::size_t>([](ModelConfig& c) -> std::size_t& { return c.vision.base_resolution; })},
        {"vit.patch_size", set<std::size_t>([](ModelConfig& c) -> std::size_t& { return c.vision.patch_size; })},
        {"vit.channels", set<std::size_t>([](ModelConfig& c) -> std::size_t& { return c.vision.channels; })},
        {"vit.d_model", set<std::size_t>([](ModelConfig& c) -> std::size_t& { return c.vision.d_model; })},
        {"vit.layers", set<std::size_t>([](ModelConfig& c) -> std::size_t& { return c.vision.layers; })},
        {"vit.heads", set<std::size_t>([](ModelConfig& c) -> std::size_t& { return c.vision.heads; })},
        {"vit.target_resolution",
         set<std::size_t>([](ModelConfig& c) -> std::size_t& { return c.vision.target_resolution; })},
        {"lora.rank", set<std::size_t>([](ModelConfig& c) -> std::size_t& { return c.options.lora.rank; })},
        {"lora.alpha", set<double>([](ModelConfig& c) -> double& { return c.options.lora.alpha; })},
        {"lora.dropout", set<double>([](ModelConfig& c) -> double& { return c.options.lora.dropout; })},
        {"init.cross_output_std",
         set<double>([](ModelConfig& c) -> double& { return c.options.cross_output_std; })},
    };
    return table;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace

void ModelConfig::validate() const {
    decoder.validate();
    vision.validate();
    options.lora.validate();
    if (!(options.cross_output_std >= 0.0)) throw ConfigError("init.cross_output_std must be >= 0");
}

ModelConfig parse_model_config(std::string_view text) {
    ModelConfig cfg;
    std::set<std::string> seen;
    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    for (std::string raw; std::getline(in, raw);) {
        ++line_no;
        const auto hash = raw.find('#');
        const std::string line = trim(std::string_view(raw).substr(0, hash));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        }
        const std::string key = trim(std::string_view(line).substr(0, eq));
        const std::string value = trim(std::string_view(line).substr(eq + 1));
        const auto it = setters().find(key);
        if (it == setters().end()) throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
        if (!seen.insert(key).second) throw ConfigError("config key '" + key + "' given twice");
        it->second(cfg, key, value);
    }
    cfg.validate();
    return cfg;
}

ModelConfig read_model_config(const std::string& path) { return parse_model_config(slurp(path)); }

std::string model_config_text(const ModelConfig& c) {
    std::ostringstream out;
    out.precision(17);
    out << "seed = " << c.seed << '\n'
        << "decoder.d_model = " << c.decoder.d_model << '\n'
        << "decoder.layers = " << c.decoder.layers << '\n'
        << "decoder.heads = " << c.decoder.heads << '\n'
        << "decoder.vocab_size = " << c.decoder.vocab_size << '\n'
        << "decoder.interval = " << c.decoder.interval << '\n'
        << "decoder.max_text_len = " << c.decoder.max_text_len << '\n'
        << "vit.base_resolution = " << c.vision.base_resolution << '\n'
        << "vit.patch_size = " << c.vision.patch_size << '\n'
        << "vit.channels = " << c.vision.channels << '\n'
        << "vit.d_model = " << c.vision.d_model << '\n'
        << "vit.layers = " << c.vision.layers << '\n'
        << "vit.heads = " << c.vision.heads << '\n'
        << "vit.target_resolution = " << c.vision.target_resolution << '\n'
        << "lora.rank = " << c.options.lora.rank << '\n'
        << "lora.alpha = " << c.options.lora.alpha << '\n'
        << "lora.dropout = " << c.options.lora.dropout << '\n'
        << "init.cross_output_std = " << c.options.cross_output_std << '\n';
    return out.str();
}

Model build_model(const ModelConfig& config) {
    config.validate();
    return build_model(config.decoder, config.vision, config.seed, config.options);
}

// --- weights ----------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'P', 'H', 'E', 'Y', 'E', 'W', '0', '1'};

template <typename T>
void put(std::string& out, T value) {
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.append(buf, sizeof(T));
}

struct Reader {
    std::string_view bytes;
    std::size_t pos = 0;

    template <typename T>
    T get() {
        if (bytes.size() - pos < sizeof(T)) throw InputError("weights file truncated at byte " + std::to_string(pos));
        T value;
        std::memcpy(&value, bytes.data() + pos, sizeof(T));
        pos += sizeof(T);
        return value;
    }
    std::string_view take(std::size_t n) {
        if (bytes.size() - pos < n) throw InputError("weights file truncated at byte " + std::to_string(pos));
        auto out = bytes.substr(pos, n);
        pos += n;
        return out;
    }
};

}  // namespace

std::string serialize_weights(const std::vector<NamedParameter>& params) {
    std::string out(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kWeightsVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
        out += p.name;
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p.tensor.rank()));
        for (std::size_t d : p.tensor.shape()) put<std::uint64_t>(out, d);
        for (double v : p.tensor.data()) put<double>(out, v);
    }
    return out;
}

std::vector<NamedArray> deserialize_weights(std::string_view bytes) {
    Reader r{bytes};
    if (r.take(sizeof kMagic) != std::string_view(kMagic, sizeof kMagic)) throw InputError("not a weights file");
    const auto version = r.get<std::uint32_t>();
    if (version != kWeightsVersion) throw InputError("unsupported weights version " + std::to_string(version));
    const auto count = r.get<std::uint32_t>();
    std::vector<NamedArray> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedArray a;
        a.name = std::string(r.take(r.get<std::uint32_t>()));
        const auto rank = r.get<std::uint32_t>();
        std::size_t numel = 1;
        for (std::uint32_t k = 0; k < rank; ++k) {
            a.shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
            numel *= a.shape.back();
        }
        if (numel > (bytes.size() - r.pos) / sizeof(double)) throw InputError("weights file truncated in " + a.name);
        a.values.resize(numel);
        for (auto& v : a.values) v = r.get<double>();
        out.push_back(std::move(a));
    }
    if (r.pos != bytes.size()) throw InputError("trailing bytes after weights");
    return out;
}

void save_weights(const std::string& path, const Model& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path);
    const std::string bytes = serialize_weights(model.named_parameters());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::vector<NamedArray> load_weights(const std::string& path) { return deserialize_weights(slurp(path)); }

void apply_weights(Model& model, const std::vector<NamedArray>& arrays) {
    std::map<std::string, const NamedArray*> by_name;
    for (const auto& a : arrays) {
        if (!by_name.emplace(a.name, &a).second) throw ConfigError("weights contain '" + a.name + "' twice");
    }
    for (auto& p : model.named_parameters()) {
        const auto it = by_name.find(p.name);
        if (it == by_name.end()) throw ConfigError("weights are missing '" + p.name + "'");
        if (it->second->shape != p.tensor.shape()) {
            throw ConfigError("weights for '" + p.name + "' have shape " + shape_to_string(it->second->shape) +
                              ", model expects " + shape_to_string(p.tensor.shape()));
        }
        auto dst = p.tensor.mutable_data();
        std::copy(it->second->values.begin(), it->second->values.end(), dst.begin());
    }
}

}  // namespace pheye
