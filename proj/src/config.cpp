#include "msscanet/config.hpp"

#include <fstream>
#include <sstream>

#include "msscanet/errors.hpp"

namespace msscanet {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw UsageError("config key '" + key + "': expected true/false, got '" + v + "'");
}

int64_t parse_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const int64_t r = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw UsageError("config key '" + key + "': expected integer, got '" + v + "'");
    }
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const uint64_t r = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw UsageError("config key '" + key + "': expected unsigned integer, got '" + v + "'");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw UsageError("config key '" + key + "': expected number, got '" + v + "'");
    }
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

template <typename T, typename F>
void take(std::map<std::string, std::string>& kv, const std::string& key, T& dst, F&& parse) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    dst = parse(key, it->second);
    kv.erase(it);
}

}  // namespace

std::map<std::string, std::string> parse_kv_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::stringstream ss(text);
    std::string line;
    int64_t line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw UsageError("config line " + std::to_string(line_no) + ": expected 'key = value', got '" +
                             line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw UsageError("config line " + std::to_string(line_no) + ": empty key");
        if (!kv.emplace(key, value).second)
            throw UsageError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
    return kv;
}

std::map<std::string, std::string> load_kv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_kv_text(ss.str());
}

void apply_model_config(std::map<std::string, std::string>& kv, ModelConfig& c) {
    take(kv, "image_size", c.image_size, parse_int);
    take(kv, "patch_short", c.patch_short, parse_int);
    take(kv, "patch_long", c.patch_long, parse_int);
    take(kv, "embed_dim", c.embed_dim, parse_int);
    take(kv, "window", c.window, parse_int);
    take(kv, "depth", c.depth, parse_int);
    take(kv, "heads", c.heads, parse_int);
    take(kv, "reduction", c.reduction, parse_int);
    take(kv, "head_hidden", c.head_hidden, parse_int);
    take(kv, "use_short_branch", c.use_short_branch, parse_bool);
    take(kv, "use_long_branch", c.use_long_branch, parse_bool);
    take(kv, "use_spatial", c.use_spatial, parse_bool);
    take(kv, "use_channel", c.use_channel, parse_bool);
    take(kv, "use_cross", c.use_cross, parse_bool);
    take(kv, "seed", c.seed, parse_u64);
}

void apply_train_schedule(std::map<std::string, std::string>& kv, TrainSchedule& s) {
    take(kv, "lr0", s.lr0, parse_double);
    take(kv, "lr_min", s.lr_min, parse_double);
    take(kv, "epochs", s.epochs, parse_int);
    take(kv, "batch_size", s.batch_size, parse_int);
    take(kv, "train_seed", s.seed, parse_u64);
    take(kv, "alpha", s.weights.alpha, parse_double);
    take(kv, "beta", s.weights.beta, parse_double);
    take(kv, "enable_cb", s.weights.enable_cb, parse_bool);
    take(kv, "enable_ap", s.weights.enable_ap, parse_bool);
    if (s.epochs < 1) throw UsageError("epochs must be >= 1");
    if (s.batch_size < 1) throw UsageError("batch_size must be >= 1");
    if (s.lr0 < 0.0 || s.lr_min < 0.0) throw UsageError("learning rates must be >= 0");
}

void apply_synth_spec(std::map<std::string, std::string>& kv, SynthSpec& s) {
    take(kv, "count", s.count, parse_int);
    take(kv, "image_size", s.image_size, parse_int);
    take(kv, "seed", s.seed, parse_u64);
    take(kv, "mos_lo", s.mos_lo, parse_double);
    take(kv, "mos_hi", s.mos_hi, parse_double);
    take(kv, "train_fraction", s.train_fraction, parse_double);
    take(kv, "tag", s.tag, [](const std::string&, const std::string& v) { return v; });
    take(kv, "kinds", s.kinds, [](const std::string&, const std::string& v) { return split_list(v); });
    take(kv, "severities", s.severities, [](const std::string& key, const std::string& v) {
        std::vector<double> out;
        for (const auto& item : split_list(v)) out.push_back(parse_double(key, item));
        return out;
    });
    for (size_t i = 1; i < s.severities.size(); ++i)
        if (s.severities[i] <= s.severities[i - 1])
            throw UsageError("severities must be strictly increasing");
    if (s.count < 1) throw UsageError("count must be >= 1");
    if (s.mos_hi <= s.mos_lo) throw UsageError("mos_hi must exceed mos_lo");
}

void require_no_leftover(const std::map<std::string, std::string>& kv, const std::string& context) {
    if (!kv.empty())
        throw UsageError(context + ": unknown key '" + kv.begin()->first + "'");
}

}  // namespace msscanet
