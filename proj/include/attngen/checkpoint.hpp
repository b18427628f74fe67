#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "attngen/errors.hpp"
#include "attngen/model.hpp"
#include "attngen/optim.hpp"
#include "attngen/textio.hpp"

namespace attngen {

constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointRecord {
    std::string name;
    std::vector<std::uint64_t> shape;
    std::vector<float> values;

    std::size_t numel() const {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        return n;
    }
};

// On-disk model snapshot. The config block is an ordered key/value list kept
// verbatim across load/save, so a round trip is byte-identical.
struct ModelCheckpoint {
    std::uint32_t version = kCheckpointVersion;
    std::vector<std::pair<std::string, std::string>> config;
    std::vector<CheckpointRecord> records;

    const CheckpointRecord* find(const std::string& name) const {
        for (const auto& r : records)
            if (r.name == name) return &r;
        return nullptr;
    }

    const std::string& config_value(const std::string& key) const {
        for (const auto& [k, v] : config)
            if (k == key) return v;
        throw DataError("checkpoint: missing config key '" + key + "'");
    }

    bool has_config(const std::string& key) const {
        for (const auto& [k, v] : config)
            if (k == key) return true;
        return false;
    }
};

void save_checkpoint(const ModelCheckpoint& ckpt, const std::string& path);
ModelCheckpoint load_checkpoint(const std::string& path);

std::string join_sizes(const std::vector<std::size_t>& values);
std::vector<std::size_t> parse_sizes(const std::string& text, const std::string& what);

namespace detail {

template <typename T>
CheckpointRecord record_from(const std::string& name, const std::vector<std::size_t>& shape,
                             const std::vector<T>& values) {
    CheckpointRecord rec;
    rec.name = name;
    rec.shape.assign(shape.begin(), shape.end());
    rec.values.reserve(values.size());
    for (T v : values) rec.values.push_back(static_cast<float>(v));
    return rec;
}

template <typename T>
void copy_into(const ModelCheckpoint& ckpt, const std::string& name,
               const std::vector<std::size_t>& shape, std::vector<T>& out) {
    const CheckpointRecord* rec = ckpt.find(name);
    if (!rec) throw ShapeError("checkpoint: missing parameter '" + name + "'");
    const std::vector<std::uint64_t> want(shape.begin(), shape.end());
    if (rec->shape != want)
        throw ShapeError("checkpoint: parameter '" + name + "' has shape " +
                         shape_str(Shape(rec->shape.begin(), rec->shape.end())) + ", expected " +
                         shape_str(Shape(shape.begin(), shape.end())));
    out.resize(rec->values.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(rec->values[i]);
}

}  // namespace detail

inline AttnGenConfig model_config_from_checkpoint(const ModelCheckpoint& ckpt) {
    AttnGenConfig cfg;
    cfg.sequence_length = parse_number<std::size_t>(ckpt.config_value("sequence_length"),
                                                    "checkpoint sequence_length");
    cfg.embedding_dim =
        parse_number<std::size_t>(ckpt.config_value("embedding_dim"), "checkpoint embedding_dim");
    cfg.kernel = parse_number<std::size_t>(ckpt.config_value("kernel_size"),
                                           "checkpoint kernel_size");
    cfg.channels = parse_sizes(ckpt.config_value("channels"), "checkpoint channels");
    cfg.pool_width =
        parse_number<std::size_t>(ckpt.config_value("pool_width"), "checkpoint pool_width");
    cfg.pool_stride =
        parse_number<std::size_t>(ckpt.config_value("pool_stride"), "checkpoint pool_stride");
    cfg.dropout_p = parse_number<double>(ckpt.config_value("dropout"), "checkpoint dropout");
    cfg.fc_hidden =
        parse_number<std::size_t>(ckpt.config_value("fc_hidden"), "checkpoint fc_hidden");
    cfg.validate();
    return cfg;
}

// Serializes model tensors, batchnorm running statistics, and Adam moments in
// one canonical record order.
template <typename T>
ModelCheckpoint build_checkpoint(AttnGenModel<T>& model, const AdamState<T>& adam,
                                 const std::string& rng_state_hex, double best_val_acc,
                                 std::vector<std::pair<std::string, std::string>> extra_config) {
    ModelCheckpoint ckpt;
    const AttnGenConfig& cfg = model.config;
    ckpt.config = {
        {"sequence_length", std::to_string(cfg.sequence_length)},
        {"embedding_dim", std::to_string(cfg.embedding_dim)},
        {"kernel_size", std::to_string(cfg.kernel)},
        {"channels", join_sizes(cfg.channels)},
        {"pool_width", std::to_string(cfg.pool_width)},
        {"pool_stride", std::to_string(cfg.pool_stride)},
        {"dropout", fmt_float(cfg.dropout_p)},
        {"fc_hidden", std::to_string(cfg.fc_hidden)},
    };
    for (auto& kv : extra_config) ckpt.config.push_back(std::move(kv));
    ckpt.config.emplace_back("adam_step_count", std::to_string(adam.step_count));
    ckpt.config.emplace_back("best_val_acc", fmt_float(best_val_acc));
    ckpt.config.emplace_back("rng_state", rng_state_hex);

    auto params = model.parameters();
    for (auto& p : params)
        ckpt.records.push_back(detail::record_from(p.name, p.tensor.shape(), p.tensor.values()));
    for (std::size_t i = 0; i < model.bn_mean.size(); ++i) {
        const std::string tag = std::to_string(i + 1);
        ckpt.records.push_back(detail::record_from("bn" + tag + ".running_mean",
                                                   {model.bn_mean[i].size()}, model.bn_mean[i]));
        ckpt.records.push_back(detail::record_from("bn" + tag + ".running_var",
                                                   {model.bn_var[i].size()}, model.bn_var[i]));
    }
    if (!adam.m.empty()) {
        for (std::size_t p = 0; p < params.size(); ++p) {
            ckpt.records.push_back(
                detail::record_from("adam.m." + params[p].name,
                                    {adam.m[p].size()}, adam.m[p]));
            ckpt.records.push_back(
                detail::record_from("adam.v." + params[p].name,
                                    {adam.v[p].size()}, adam.v[p]));
        }
    }
    return ckpt;
}

// Restores tensors and running statistics into a model built from a matching
// config; shape disagreements name the offending parameter.
template <typename T>
void apply_checkpoint(AttnGenModel<T>& model, const ModelCheckpoint& ckpt) {
    for (auto& p : model.parameters()) {
        const CheckpointRecord* rec = ckpt.find(p.name);
        if (!rec) throw ShapeError("checkpoint: missing parameter '" + p.name + "'");
        detail::copy_into(ckpt, p.name, p.tensor.shape(), p.tensor.values());
    }
    for (std::size_t i = 0; i < model.bn_mean.size(); ++i) {
        const std::string tag = std::to_string(i + 1);
        detail::copy_into(ckpt, "bn" + tag + ".running_mean", {model.bn_mean[i].size()},
                          model.bn_mean[i]);
        detail::copy_into(ckpt, "bn" + tag + ".running_var", {model.bn_var[i].size()},
                          model.bn_var[i]);
    }
}

template <typename T>
void restore_adam(AdamState<T>& adam, AttnGenModel<T>& model, const ModelCheckpoint& ckpt) {
    adam.step_count = parse_number<std::uint64_t>(ckpt.config_value("adam_step_count"),
                                                  "checkpoint adam_step_count");
    auto params = model.parameters();
    adam.m.assign(params.size(), {});
    adam.v.assign(params.size(), {});
    for (std::size_t p = 0; p < params.size(); ++p) {
        detail::copy_into(ckpt, "adam.m." + params[p].name, {params[p].tensor.numel()},
                          adam.m[p]);
        detail::copy_into(ckpt, "adam.v." + params[p].name, {params[p].tensor.numel()},
                          adam.v[p]);
    }
}

template <typename T>
AttnGenModel<T> model_from_checkpoint(const ModelCheckpoint& ckpt) {
    auto model = init_model<T>(model_config_from_checkpoint(ckpt), 0);
    apply_checkpoint(model, ckpt);
    return model;
}

}  // namespace attngen
