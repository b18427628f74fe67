#include "attngen/runconfig.hpp"

#include <fstream>

#include "attngen/errors.hpp"
#include "attngen/textio.hpp"

namespace attngen {

namespace {

std::string trim(const std::string& text) {
    std::size_t first = text.find_first_not_of(" \t");
    if (first == std::string::npos) return "";
    std::size_t last = text.find_last_not_of(" \t");
    return text.substr(first, last - first + 1);
}

}  // namespace

const std::vector<KeySpec>& RunConfig::registry() {
    static const std::vector<KeySpec> keys = {
        {"corpus", "", "input corpus CSV (sequence,label)"},
        {"checkpoint", "", "model checkpoint to load"},
        {"out_dir", "out", "directory receiving all artifacts"},
        {"seed", "42", "master seed for initialization, splitting, and training"},
        {"precision", "f32", "training scalar type: f32 or f64"},
        {"train_fraction", "0.9", "per-class fraction of the corpus used for training"},
        {"split", "validation", "corpus part analyzed by eval/perturb/viz: validation, train, none"},
        {"sequence_length", "200", "tokens per sequence"},
        {"embedding_dim", "128", "embedding width"},
        {"kernel_size", "8", "convolution kernel width"},
        {"channels", "32,16,4", "output channels per convolution stage"},
        {"pool_width", "2", "max-pool window"},
        {"pool_stride", "2", "max-pool stride"},
        {"dropout", "0.3", "dropout probability before the classifier"},
        {"fc_hidden", "64", "hidden units in the classifier"},
        {"alpha", "0.1", "fraction of positions masked per sequence"},
        {"lambda", "0.1", "weight of the masked-consistency term"},
        {"lr", "0.001", "Adam learning rate"},
        {"batch", "64", "mini-batch size"},
        {"weight_decay", "0.0001", "decoupled weight decay on weight matrices"},
        {"max_epochs", "50", "epoch budget"},
        {"patience", "10", "non-improving epochs tolerated before stopping"},
        {"clip_norm", "1", "global gradient-norm ceiling"},
        {"eval_count", "3000", "sequence cap for perturbation analysis"},
        {"schedule", "0,1,5,10,25,50,100,150,200", "masked-position counts for perturb"},
        {"order", "high", "occlusion order: high, low, or random"},
        {"alphas", "0.1,0.25,0.5", "masking ratios rendered by viz"},
        {"viz_count", "8", "sequences rendered by viz"},
        {"count", "2000", "sequences generated by gen-synthetic"},
        {"motif0", "ATGCCGTA", "motif planted in class-0 sequences"},
        {"motif1", "TACGGCAT", "motif planted in class-1 sequences"},
        {"plant_probability", "1", "probability a generated sequence carries its motif"},
        {"position_mode", "uniform", "motif placement: uniform or fixed"},
        {"fixed_position", "0", "motif start when position_mode = fixed"},
    };
    return keys;
}

RunConfig::RunConfig() {
    for (const auto& spec : registry()) values_[spec.key] = spec.default_value;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second = value;
}

const std::string& RunConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
}

void RunConfig::load_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file: " + path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string content = trim(line);
        if (content.empty()) continue;
        const std::string where = path + ":" + std::to_string(line_no);
        const std::size_t eq = content.find('=');
        if (eq == std::string::npos)
            throw ConfigError(where + ": expected 'key = value', got '" + content + "'");
        const std::string key = trim(content.substr(0, eq));
        if (key.empty()) throw ConfigError(where + ": empty key");
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError(where + ": unknown config key '" + key + "'");
        it->second = trim(content.substr(eq + 1));
    }
}

double RunConfig::get_double(const std::string& key) const {
    return parse_number<double>(get(key), "config " + key);
}

std::size_t RunConfig::get_size(const std::string& key) const {
    return parse_number<std::size_t>(get(key), "config " + key);
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
    return parse_number<std::uint64_t>(get(key), "config " + key);
}

namespace {

std::vector<std::string> comma_split(const std::string& text) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = text.find(',', start);
        if (comma == std::string::npos) {
            parts.push_back(trim(text.substr(start)));
            return parts;
        }
        parts.push_back(trim(text.substr(start, comma - start)));
        start = comma + 1;
    }
}

}  // namespace

std::vector<std::size_t> RunConfig::get_size_list(const std::string& key) const {
    std::vector<std::size_t> out;
    for (const auto& part : comma_split(get(key)))
        out.push_back(parse_number<std::size_t>(part, "config " + key));
    return out;
}

std::vector<double> RunConfig::get_double_list(const std::string& key) const {
    std::vector<double> out;
    for (const auto& part : comma_split(get(key)))
        out.push_back(parse_number<double>(part, "config " + key));
    return out;
}

void RunConfig::write_snapshot(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write config snapshot: " + path);
    for (const auto& spec : registry()) out << spec.key << " = " << get(spec.key) << '\n';
    if (!out) throw DataError("write failed: " + path);
}

AttnGenConfig RunConfig::model_config() const {
    AttnGenConfig cfg;
    cfg.sequence_length = get_size("sequence_length");
    cfg.embedding_dim = get_size("embedding_dim");
    cfg.kernel = get_size("kernel_size");
    cfg.channels = get_size_list("channels");
    cfg.pool_width = get_size("pool_width");
    cfg.pool_stride = get_size("pool_stride");
    cfg.dropout_p = get_double("dropout");
    cfg.fc_hidden = get_size("fc_hidden");
    cfg.validate();
    return cfg;
}

TrainConfig RunConfig::train_config() const {
    TrainConfig cfg;
    cfg.lr = get_double("lr");
    cfg.batch = get_size("batch");
    cfg.weight_decay = get_double("weight_decay");
    cfg.lambda = get_double("lambda");
    cfg.alpha = get_double("alpha");
    cfg.max_epochs = get_size("max_epochs");
    cfg.patience = get_size("patience");
    cfg.clip_norm = get_double("clip_norm");
    cfg.seed = get_u64("seed");
    cfg.precision = get("precision");
    cfg.validate();
    return cfg;
}

SyntheticSpec RunConfig::synthetic_spec() const {
    SyntheticSpec spec;
    spec.count = get_size("count");
    spec.length = get_size("sequence_length");
    spec.motif_class0 = get("motif0");
    spec.motif_class1 = get("motif1");
    spec.plant_probability = get_double("plant_probability");
    const std::string& mode = get("position_mode");
    if (mode == "uniform") {
        spec.position_mode = PositionMode::kUniform;
    } else if (mode == "fixed") {
        spec.position_mode = PositionMode::kFixed;
    } else {
        throw ConfigError("config position_mode: expected uniform or fixed, got '" + mode + "'");
    }
    spec.fixed_position = get_size("fixed_position");
    spec.seed = get_u64("seed");
    return spec;
}

}  // namespace attngen
