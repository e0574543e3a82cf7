#include "hct/config.hpp"

#include <fstream>
#include <sstream>

namespace hct {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::string strip_quotes(std::string v) {
    if (v.size() >= 2 && ((v.front() == '"' && v.back() == '"') ||
                          (v.front() == '\'' && v.back() == '\'')))
        return v.substr(1, v.size() - 2);
    return v;
}

} // namespace

std::map<std::string, std::string> parse_kv_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file '" + path + "'");
    std::map<std::string, std::string> kv;
    std::string line, section;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("config '" + path + "' line " + std::to_string(lineno) +
                                  ": unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config '" + path + "' line " + std::to_string(lineno) +
                              ": expected key = value, got '" + line + "'");
        std::string key = trim(line.substr(0, eq));
        std::string val = strip_quotes(trim(line.substr(eq + 1)));
        if (key.empty())
            throw ConfigError("config '" + path + "' line " + std::to_string(lineno) +
                              ": empty key");
        if (!section.empty()) key = section + "." + key;
        kv[key] = val;
    }
    return kv;
}

void apply_override(std::map<std::string, std::string>& kv, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override must look like key=value, got '" + assignment + "'");
    kv[trim(assignment.substr(0, eq))] = strip_quotes(trim(assignment.substr(eq + 1)));
}

TrainStage stage_from_name(const std::string& name) {
    if (name == "ps") return TrainStage::PhaseStep;
    if (name == "ia") return TrainStage::InstrumentAction;
    if (name == "joint") return TrainStage::Joint;
    throw ConfigError("unknown stage '" + name + "' (expected ps, ia, or joint)");
}

const char* stage_name(TrainStage s) {
    switch (s) {
        case TrainStage::PhaseStep: return "ps";
        case TrainStage::InstrumentAction: return "ia";
        case TrainStage::Joint: return "joint";
    }
    return "?";
}

namespace {

struct KvReader {
    const std::map<std::string, std::string>& kv;
    mutable std::map<std::string, bool> seen;

    std::string str(const std::string& key, const std::string& dflt) const {
        auto it = kv.find(key);
        if (it == kv.end()) return dflt;
        seen[key] = true;
        return it->second;
    }
    int64_t i64(const std::string& key, int64_t dflt) const {
        auto it = kv.find(key);
        if (it == kv.end()) return dflt;
        seen[key] = true;
        try {
            size_t pos = 0;
            const int64_t v = std::stoll(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "': '" + it->second +
                              "' is not an integer");
        }
    }
    double f64(const std::string& key, double dflt) const {
        auto it = kv.find(key);
        if (it == kv.end()) return dflt;
        seen[key] = true;
        try {
            size_t pos = 0;
            const double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "': '" + it->second + "' is not a number");
        }
    }
    bool boolean(const std::string& key, bool dflt) const {
        auto it = kv.find(key);
        if (it == kv.end()) return dflt;
        seen[key] = true;
        if (it->second == "true" || it->second == "1") return true;
        if (it->second == "false" || it->second == "0") return false;
        throw ConfigError("config key '" + key + "': '" + it->second + "' is not a boolean");
    }
};

} // namespace

RunConfig RunConfig::from_kv(const std::map<std::string, std::string>& kv) {
    KvReader r{kv, {}};
    RunConfig c;
    c.data_path = r.str("data.path", c.data_path);
    c.out_dir = r.str("run.out_dir", c.out_dir);
    c.epochs = r.i64("train.epochs", c.epochs);
    c.warmup_epochs = r.i64("train.warmup_epochs", c.warmup_epochs);
    c.batch_size = r.i64("train.batch_size", c.batch_size);
    c.lr = r.f64("train.lr", c.lr);
    c.weight_decay = r.f64("train.weight_decay", c.weight_decay);
    c.seed = uint64_t(r.i64("train.seed", int64_t(c.seed)));
    c.stage = stage_from_name(r.str("train.stage", stage_name(c.stage)));
    c.freeze = r.str("train.freeze", c.freeze);

    auto& m = c.model;
    m.trunk.channels = r.i64("model.channels", m.trunk.channels);
    m.trunk.heads = r.i64("model.heads", m.trunk.heads);
    m.trunk.clip_len = r.i64("model.clip_len", m.trunk.clip_len);
    m.n_blocks = r.i64("model.blocks", m.n_blocks);
    m.use_hram = r.boolean("model.hram", m.use_hram);
    m.use_icl = r.boolean("model.icl", m.use_icl);
    m.use_slicing_skip = r.boolean("model.slicing_skip", m.use_slicing_skip);
    m.use_t_adapters = r.boolean("model.t_adapters", m.use_t_adapters);
    m.use_s_adapters = r.boolean("model.s_adapters", m.use_s_adapters);
    m.adapter.ratio = r.f64("model.adapter_ratio", m.adapter.ratio);
    m.init_seed = uint64_t(r.i64("model.init_seed", int64_t(m.init_seed)));
    m.icl.tau = r.f64("loss.tau", m.icl.tau);
    m.lambdas.phase = r.f64("loss.lambda_phase", m.lambdas.phase);
    m.lambdas.step = r.f64("loss.lambda_step", m.lambdas.step);
    m.lambdas.instrument = r.f64("loss.lambda_instrument", m.lambdas.instrument);
    m.lambdas.action = r.f64("loss.lambda_action", m.lambdas.action);

    for (const auto& [key, _] : kv)
        if (!r.seen.count(key)) throw ConfigError("unknown config key '" + key + "'");

    c.validate();
    return c;
}

void RunConfig::validate() const {
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (warmup_epochs < 0 || warmup_epochs >= epochs)
        throw ConfigError("train.warmup_epochs (" + std::to_string(warmup_epochs) +
                          ") must be in [0, epochs)");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (model.use_icl && batch_size < 2)
        throw ConfigError("train.batch_size must be >= 2 when the contrastive loss is enabled");
    if (lr <= 0.0) throw ConfigError("train.lr must be positive");
    if (model.icl.tau <= 0.0) throw ConfigError("loss.tau must be positive");
    if (model.adapter.ratio <= 0.0 || model.adapter.ratio >= 1.0)
        throw ConfigError("model.adapter_ratio must be in (0,1)");
}

uint64_t config_hash(const RunConfig& cfg) {
    // FNV-1a over the canonical serialization of the fields that must match
    // between a checkpoint and the resuming run
    std::ostringstream s;
    s << cfg.model.trunk.channels << '|' << cfg.model.trunk.heads << '|'
      << cfg.model.trunk.clip_len << '|' << cfg.model.n_blocks << '|' << cfg.model.use_hram << '|'
      << cfg.model.use_icl << '|' << cfg.model.use_slicing_skip << '|' << cfg.model.use_t_adapters
      << '|' << cfg.model.use_s_adapters << '|' << cfg.model.adapter.ratio << '|'
      << cfg.model.init_seed << '|' << cfg.batch_size << '|' << cfg.lr << '|' << cfg.weight_decay
      << '|' << cfg.seed << '|' << stage_name(cfg.stage) << '|' << cfg.freeze;
    uint64_t h = 1469598103934665603ull;
    for (char ch : s.str()) {
        h ^= uint64_t(uint8_t(ch));
        h *= 1099511628211ull;
    }
    return h;
}

} // namespace hct
