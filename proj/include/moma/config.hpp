// Experiment config files: key = value lines grouped under [section]
// headers, '#' comments. Unknown keys are usage errors listing the valid
// keys for that section.
#pragma once

#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "moma/data.hpp"
#include "moma/model.hpp"

namespace moma {

struct TrainConfig {
    size_t epochs = 20;
    size_t batch = 8;
    bool teacher_cache = true;
};

struct ExperimentConfig {
    ModelConfig model;
    TrainConfig train;
    SyntheticTask task;
};

namespace detail {

struct RawConfig {
    // section -> ordered (key, value)
    std::map<std::string, std::vector<std::pair<std::string, std::string>>> sections;
};

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline RawConfig parse_raw_config(const std::string& text) {
    RawConfig raw;
    std::string section;
    std::istringstream in(text);
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("line " + std::to_string(lineno) + ": unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            raw.sections[section];
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value, got '" + line +
                              "'");
        raw.sections[section].emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return raw;
}

inline std::string join_keys(const std::set<std::string>& keys) {
    std::string out;
    for (const auto& k : keys) {
        if (!out.empty()) out += ", ";
        out += k;
    }
    return out;
}

struct SectionReader {
    std::string name;
    std::map<std::string, std::string> kv;
    std::set<std::string> valid;

    bool has(const std::string& key) const { return kv.count(key) != 0; }
    std::string get(const std::string& key, const std::string& fallback) const {
        auto it = kv.find(key);
        return it == kv.end() ? fallback : it->second;
    }
    size_t get_size(const std::string& key, size_t fallback) const {
        auto it = kv.find(key);
        if (it == kv.end()) return fallback;
        try {
            return std::stoul(it->second);
        } catch (...) {
            throw ConfigError("[" + name + "] " + key + ": expected integer, got '" + it->second + "'");
        }
    }
    double get_double(const std::string& key, double fallback) const {
        auto it = kv.find(key);
        if (it == kv.end()) return fallback;
        try {
            return std::stod(it->second);
        } catch (...) {
            throw ConfigError("[" + name + "] " + key + ": expected number, got '" + it->second + "'");
        }
    }
    uint64_t get_u64(const std::string& key, uint64_t fallback) const {
        auto it = kv.find(key);
        if (it == kv.end()) return fallback;
        try {
            return std::stoull(it->second);
        } catch (...) {
            throw ConfigError("[" + name + "] " + key + ": expected integer, got '" + it->second + "'");
        }
    }
};

inline SectionReader make_reader(const RawConfig& raw, const std::string& section,
                                 std::set<std::string> valid) {
    SectionReader r;
    r.name = section;
    r.valid = std::move(valid);
    auto it = raw.sections.find(section);
    if (it != raw.sections.end())
        for (const auto& [k, v] : it->second) {
            if (!r.valid.count(k))
                throw ConfigError("unknown key '" + k + "' in [" + section +
                                  "]; valid keys: " + join_keys(r.valid));
            r.kv[k] = v;
        }
    return r;
}

inline ScanPlan parse_scan_plan(const std::string& s) {
    ScanPlan plan;
    std::istringstream in(s);
    std::string tok;
    while (in >> tok) plan.push_back(scan_direction_from_string(tok));
    if (plan.empty()) throw ConfigError("scan_plan must list at least one direction");
    return plan;
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const std::string& text) {
    using detail::make_reader;
    detail::RawConfig raw = detail::parse_raw_config(text);
    for (const auto& [section, _] : raw.sections)
        if (section != "model" && section != "train" && section != "data")
            throw ConfigError("unknown section [" + section + "]; valid sections: data, model, train");

    ExperimentConfig cfg;
    auto model = make_reader(raw, "model",
                             {"frames", "pix_h", "pix_w", "patch", "channels", "heads", "classes",
                              "layers", "pattern", "window", "fusion", "scan_plan", "ssm_hidden",
                              "ssm_state", "gate_act", "scan_chunk", "max_fusion_bias", "lambda", "lr",
                              "weight_decay", "beta1", "beta2", "adam_eps", "seed"});
    ModelConfig& m = cfg.model;
    m.frames = model.get_size("frames", m.frames);
    m.pix_h = model.get_size("pix_h", m.pix_h);
    m.pix_w = model.get_size("pix_w", m.pix_w);
    m.patch = model.get_size("patch", m.patch);
    m.channels = model.get_size("channels", m.channels);
    m.heads = model.get_size("heads", m.heads);
    m.classes = model.get_size("classes", m.classes);
    m.layers = model.get_size("layers", m.layers);
    m.pattern = model.get("pattern", m.pattern);
    if (model.has("window")) m.window = WindowSpec::parse(model.get("window", ""));
    if (model.has("fusion")) m.fusion = fusion_from_string(model.get("fusion", ""));
    if (model.has("scan_plan")) m.scan_plan = detail::parse_scan_plan(model.get("scan_plan", ""));
    m.ssm_hidden = model.get_size("ssm_hidden", m.ssm_hidden);
    m.ssm_state = model.get_size("ssm_state", m.ssm_state);
    if (model.has("gate_act")) m.gate_act = activation_from_string(model.get("gate_act", ""));
    m.scan_chunk = model.get_size("scan_chunk", m.scan_chunk);
    m.max_fusion_bias = model.get_double("max_fusion_bias", m.max_fusion_bias);
    m.distill_lambda = model.get_double("lambda", m.distill_lambda);
    m.lr = model.get_double("lr", m.lr);
    m.weight_decay = model.get_double("weight_decay", m.weight_decay);
    m.beta1 = model.get_double("beta1", m.beta1);
    m.beta2 = model.get_double("beta2", m.beta2);
    m.adam_eps = model.get_double("adam_eps", m.adam_eps);
    m.seed = model.get_u64("seed", m.seed);

    auto train = make_reader(raw, "train", {"epochs", "batch", "teacher_cache"});
    cfg.train.epochs = train.get_size("epochs", cfg.train.epochs);
    cfg.train.batch = train.get_size("batch", cfg.train.batch);
    cfg.train.teacher_cache = train.get("teacher_cache", cfg.train.teacher_cache ? "on" : "off") == "on";

    auto data = make_reader(raw, "data", {"task", "samples", "noise", "seed"});
    if (data.has("task")) cfg.task.kind = task_from_string(data.get("task", ""));
    cfg.task.samples = data.get_size("samples", cfg.task.samples);
    cfg.task.noise = data.get_double("noise", cfg.task.noise);
    cfg.task.seed = data.get_u64("seed", cfg.task.seed);
    cfg.task.frames = m.frames;
    cfg.task.height = m.pix_h;
    cfg.task.width = m.pix_w;
    return cfg;
}

inline std::string render_experiment_config(const ExperimentConfig& cfg) {
    std::ostringstream out;
    const ModelConfig& m = cfg.model;
    out << "[model]\n";
    out << "frames = " << m.frames << "\n";
    out << "pix_h = " << m.pix_h << "\n";
    out << "pix_w = " << m.pix_w << "\n";
    out << "patch = " << m.patch << "\n";
    out << "channels = " << m.channels << "\n";
    out << "heads = " << m.heads << "\n";
    out << "classes = " << m.classes << "\n";
    out << "layers = " << m.layers << "\n";
    out << "pattern = " << m.pattern << "\n";
    out << "window = " << m.window.str() << "\n";
    out << "fusion = " << to_string(m.fusion) << "\n";
    out << "scan_plan =";
    for (const auto& d : m.scan_plan) out << " " << to_string(d);
    out << "\n";
    out << "ssm_hidden = " << m.ssm_hidden << "\n";
    out << "ssm_state = " << m.ssm_state << "\n";
    out << "gate_act = " << to_string(m.gate_act) << "\n";
    out << "scan_chunk = " << m.scan_chunk << "\n";
    out << "max_fusion_bias = " << m.max_fusion_bias << "\n";
    out << "lambda = " << m.distill_lambda << "\n";
    out << "lr = " << m.lr << "\n";
    out << "weight_decay = " << m.weight_decay << "\n";
    out << "beta1 = " << m.beta1 << "\n";
    out << "beta2 = " << m.beta2 << "\n";
    out << "adam_eps = " << m.adam_eps << "\n";
    out << "seed = " << m.seed << "\n";
    out << "\n[train]\n";
    out << "epochs = " << cfg.train.epochs << "\n";
    out << "batch = " << cfg.train.batch << "\n";
    out << "teacher_cache = " << (cfg.train.teacher_cache ? "on" : "off") << "\n";
    out << "\n[data]\n";
    out << "task = " << to_string(cfg.task.kind) << "\n";
    out << "samples = " << cfg.task.samples << "\n";
    out << "noise = " << cfg.task.noise << "\n";
    out << "seed = " << cfg.task.seed << "\n";
    return out.str();
}

}  // namespace moma
