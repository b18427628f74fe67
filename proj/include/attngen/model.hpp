#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "attngen/data.hpp"
#include "attngen/errors.hpp"
#include "attngen/optim.hpp"
#include "attngen/rng.hpp"
#include "attngen/tensor.hpp"

namespace attngen {

struct AttnGenConfig {
    std::size_t sequence_length = 200;
    std::size_t vocab = kVocabSize;
    std::size_t embedding_dim = 128;
    std::size_t kernel = 8;
    std::vector<std::size_t> channels = {32, 16, 4};
    std::size_t pool_width = 2;
    std::size_t pool_stride = 2;
    double dropout_p = 0.3;
    std::size_t fc_hidden = 64;
    std::size_t classes = 2;
    double bn_momentum = 0.1;
    double bn_eps = 1e-5;

    // Same-padding split for the convolution: 3 left / 4 right at kernel 8.
    std::size_t pad_left() const { return (kernel - 1) / 2; }
    std::size_t pad_right() const { return kernel / 2; }

    std::vector<std::size_t> stage_lengths() const {
        std::vector<std::size_t> lengths = {sequence_length};
        std::size_t L = sequence_length;
        for (std::size_t i = 0; i < channels.size(); ++i) {
            if (pool_width > L)
                throw ConfigError("config: pooling window " + std::to_string(pool_width) +
                                  " exceeds stage length " + std::to_string(L));
            L = (L - pool_width) / pool_stride + 1;
            lengths.push_back(L);
        }
        return lengths;
    }

    std::size_t final_length() const { return stage_lengths().back(); }
    std::size_t flatten_width() const { return channels.back() * final_length(); }

    void validate() const {
        if (sequence_length == 0) throw ConfigError("config: sequence_length must be positive");
        if (vocab < 2) throw ConfigError("config: vocab must be at least 2");
        if (embedding_dim == 0) throw ConfigError("config: embedding_dim must be positive");
        if (kernel == 0) throw ConfigError("config: kernel_size must be positive");
        if (channels.empty()) throw ConfigError("config: channels must name at least one stage");
        for (std::size_t c : channels)
            if (c == 0) throw ConfigError("config: channel counts must be positive");
        if (pool_width == 0 || pool_stride == 0)
            throw ConfigError("config: pool_width and pool_stride must be positive");
        if (dropout_p < 0.0 || dropout_p >= 1.0)
            throw ConfigError("config: dropout must lie in [0, 1), got " +
                              std::to_string(dropout_p));
        if (fc_hidden == 0) throw ConfigError("config: fc_hidden must be positive");
        if (classes != 2) throw ConfigError("config: only binary classification is supported");
        stage_lengths();
    }
};

// Raw per-position saliency scores (mean over the embedding width) and their
// row-softmax. Held outside the differentiation graph: mask selection is a
// discrete choice, so no gradient flows through it.
template <typename T>
struct AttentionMap {
    std::size_t batch = 0;
    std::size_t length = 0;
    std::vector<T> scores;
    std::vector<T> weights;
};

struct MaskPlan {
    double alpha = 0.0;
    std::size_t k = 0;
    std::vector<std::vector<std::size_t>> indices;  // per sequence, ascending
};

template <typename T>
struct AttnGenModel {
    AttnGenConfig config;
    Tensor<T> embedding;
    std::vector<Tensor<T>> conv_w, conv_b, bn_gamma, bn_beta;
    std::vector<std::vector<T>> bn_mean, bn_var;
    Tensor<T> fc1_w, fc1_b, fc2_w, fc2_b;

    std::vector<Parameter<T>> parameters() {
        std::vector<Parameter<T>> out;
        out.push_back({"embedding", embedding, true});
        for (std::size_t i = 0; i < conv_w.size(); ++i) {
            const std::string tag = std::to_string(i + 1);
            out.push_back({"conv" + tag + ".weight", conv_w[i], true});
            out.push_back({"conv" + tag + ".bias", conv_b[i], false});
            out.push_back({"bn" + tag + ".gamma", bn_gamma[i], false});
            out.push_back({"bn" + tag + ".beta", bn_beta[i], false});
        }
        out.push_back({"fc1.weight", fc1_w, true});
        out.push_back({"fc1.bias", fc1_b, false});
        out.push_back({"fc2.weight", fc2_w, true});
        out.push_back({"fc2.bias", fc2_b, false});
        return out;
    }

    void zero_grads() {
        for (auto& p : parameters()) p.tensor.zero_grad();
    }
};

// Fan-in-scaled uniform init for conv/linear weights, uniform +-0.1 embedding
// rows, neutral normalization. Draw order is fixed by declaration order, so a
// seed pins every weight.
template <typename T>
AttnGenModel<T> init_model(const AttnGenConfig& config, std::uint64_t seed) {
    config.validate();
    AttnGenModel<T> model;
    model.config = config;
    Rng rng(seed, rng_stream::kInit);

    auto fill = [&rng](Tensor<T>& t, T bound) {
        for (auto& v : t.values()) v = static_cast<T>(rng.symmetric(static_cast<double>(bound)));
    };

    model.embedding = Tensor<T>::zeros({config.vocab, config.embedding_dim}, true);
    fill(model.embedding, T(0.1));

    std::size_t in_ch = config.embedding_dim;
    for (std::size_t out_ch : config.channels) {
        auto w = Tensor<T>::zeros({out_ch, in_ch, config.kernel}, true);
        fill(w, static_cast<T>(std::sqrt(6.0 / static_cast<double>(in_ch * config.kernel))));
        model.conv_w.push_back(w);
        model.conv_b.push_back(Tensor<T>::zeros({out_ch}, true));
        model.bn_gamma.push_back(Tensor<T>::full({out_ch}, T(1), true));
        model.bn_beta.push_back(Tensor<T>::zeros({out_ch}, true));
        model.bn_mean.emplace_back(out_ch, T(0));
        model.bn_var.emplace_back(out_ch, T(1));
        in_ch = out_ch;
    }

    const std::size_t flat = config.flatten_width();
    model.fc1_w = Tensor<T>::zeros({config.fc_hidden, flat}, true);
    fill(model.fc1_w, static_cast<T>(std::sqrt(6.0 / static_cast<double>(flat))));
    model.fc1_b = Tensor<T>::zeros({config.fc_hidden}, true);
    model.fc2_w = Tensor<T>::zeros({config.classes, config.fc_hidden}, true);
    fill(model.fc2_w, static_cast<T>(std::sqrt(6.0 / static_cast<double>(config.fc_hidden))));
    model.fc2_b = Tensor<T>::zeros({config.classes}, true);
    return model;
}

// s[b,i] = mean over the embedding width of E[b,i,:]. Positions holding the
// same token share one embedding row, so their scores are bit-equal.
template <typename T>
AttentionMap<T> attention_scores(const Tensor<T>& embeddings) {
    if (embeddings.shape().size() != 3)
        throw ShapeError("attention_scores: expected a batch x length x width tensor");
    AttentionMap<T> map;
    map.batch = embeddings.dim(0);
    map.length = embeddings.dim(1);
    const std::size_t d = embeddings.dim(2);
    map.scores.resize(map.batch * map.length);
    const T* e = embeddings.values().data();
    for (std::size_t i = 0; i < map.scores.size(); ++i) {
        T acc = 0;
        for (std::size_t j = 0; j < d; ++j) acc += e[i * d + j];
        map.scores[i] = acc / static_cast<T>(d);
    }
    return map;
}

// Row-wise stable softmax of the scores.
template <typename T>
AttentionMap<T> attention_weights(AttentionMap<T> map) {
    map.weights.resize(map.scores.size());
    for (std::size_t b = 0; b < map.batch; ++b) {
        const T* row = map.scores.data() + b * map.length;
        T* out = map.weights.data() + b * map.length;
        T mx = row[0];
        for (std::size_t i = 1; i < map.length; ++i) mx = std::max(mx, row[i]);
        T z = 0;
        for (std::size_t i = 0; i < map.length; ++i) {
            out[i] = std::exp(row[i] - mx);
            z += out[i];
        }
        const T inv = T(1) / z;
        for (std::size_t i = 0; i < map.length; ++i) out[i] *= inv;
    }
    return map;
}

// The k = floor(alpha * L) lowest-weight positions per sequence; ties fall to
// the lower index via stable sort. Returned index lists are ascending.
template <typename T>
MaskPlan select_mask_indices(const AttentionMap<T>& map, double alpha) {
    if (alpha < 0.0 || alpha > 1.0)
        throw UsageError("select_mask_indices: alpha must lie in [0, 1], got " +
                         std::to_string(alpha));
    MaskPlan plan;
    plan.alpha = alpha;
    plan.k = static_cast<std::size_t>(alpha * static_cast<double>(map.length));
    plan.indices.resize(map.batch);
    std::vector<std::size_t> order(map.length);
    for (std::size_t b = 0; b < map.batch; ++b) {
        const T* row = map.weights.data() + b * map.length;
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [row](std::size_t i, std::size_t j) { return row[i] < row[j]; });
        auto& idx = plan.indices[b];
        idx.assign(order.begin(), order.begin() + plan.k);
        std::sort(idx.begin(), idx.end());
    }
    return plan;
}

// k uniform positions per sequence, drawn without replacement; the
// attention-independent control arm of the ablation suite.
inline MaskPlan random_mask_indices(std::size_t batch, std::size_t length, std::size_t k,
                                    double alpha, Rng& rng) {
    MaskPlan plan;
    plan.alpha = alpha;
    plan.k = k;
    plan.indices.resize(batch);
    std::vector<std::size_t> pool(length);
    for (std::size_t b = 0; b < batch; ++b) {
        std::iota(pool.begin(), pool.end(), std::size_t{0});
        for (std::size_t i = 0; i < k; ++i)
            std::swap(pool[i], pool[i + rng.bounded(length - i)]);
        auto& idx = plan.indices[b];
        idx.assign(pool.begin(), pool.begin() + k);
        std::sort(idx.begin(), idx.end());
    }
    return plan;
}

inline std::vector<std::int32_t> apply_mask(const std::vector<std::int32_t>& tokens,
                                            std::size_t length, const MaskPlan& plan) {
    if (plan.indices.size() * length != tokens.size())
        throw ShapeError("apply_mask: plan covers " + std::to_string(plan.indices.size()) +
                         " sequences but tokens hold " + std::to_string(tokens.size() / length));
    std::vector<std::int32_t> masked = tokens;
    for (std::size_t b = 0; b < plan.indices.size(); ++b)
        for (std::size_t i : plan.indices[b]) {
            if (i >= length) throw UsageError("apply_mask: index out of range");
            masked[b * length + i] = kPadToken;
        }
    return masked;
}

template <typename T>
struct ForwardResult {
    Tensor<T> logits;
    AttentionMap<T> attention;
    Tensor<T> embeddings;  // lookup output, the saliency differentiation target
};

// Conv/fc trunk over an already-embedded batch x length x width input; the
// entry point for saliency gradients taken with respect to the embeddings.
template <typename T>
Tensor<T> forward_from_embeddings(AttnGenModel<T>& model, const Tensor<T>& embeddings, bool train,
                                  Rng& rng) {
    const AttnGenConfig& cfg = model.config;
    if (embeddings.shape().size() != 3 || embeddings.dim(1) != cfg.sequence_length ||
        embeddings.dim(2) != cfg.embedding_dim)
        throw ShapeError("forward_from_embeddings: expected batch x " +
                         std::to_string(cfg.sequence_length) + " x " +
                         std::to_string(cfg.embedding_dim) + ", got " +
                         shape_str(embeddings.shape()));
    const std::size_t B = embeddings.dim(0);

    Tensor<T> x = permute_021(embeddings);
    for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
        x = conv1d(x, model.conv_w[i], model.conv_b[i], cfg.pad_left(), cfg.pad_right());
        x = batchnorm1d(x, model.bn_gamma[i], model.bn_beta[i], model.bn_mean[i], model.bn_var[i],
                        train, static_cast<T>(cfg.bn_momentum), static_cast<T>(cfg.bn_eps));
        x = relu(x);
        x = maxpool1d(x, cfg.pool_width, cfg.pool_stride);
    }
    x = reshape(x, {B, cfg.flatten_width()});
    x = relu(linear(x, model.fc1_w, model.fc1_b));
    x = dropout(x, cfg.dropout_p, train, rng);
    return linear(x, model.fc2_w, model.fc2_b);
}

template <typename T>
ForwardResult<T> forward(AttnGenModel<T>& model, const std::vector<std::int32_t>& tokens,
                         bool train, Rng& rng) {
    const AttnGenConfig& cfg = model.config;
    if (tokens.empty() || tokens.size() % cfg.sequence_length != 0)
        throw ShapeError("forward: token buffer of size " + std::to_string(tokens.size()) +
                         " is not a multiple of sequence length " +
                         std::to_string(cfg.sequence_length));
    const std::size_t B = tokens.size() / cfg.sequence_length;

    ForwardResult<T> result;
    result.embeddings = embedding_lookup(model.embedding, tokens, B, cfg.sequence_length);
    result.attention = attention_weights(attention_scores(result.embeddings));
    result.logits = forward_from_embeddings(model, result.embeddings, train, rng);
    return result;
}

template <typename T>
struct LossParts {
    Tensor<T> loss;
    Tensor<T> ce;
    Tensor<T> kl;
    MaskPlan plan;
    Tensor<T> logits;  // unmasked-pass logits, for training accuracy
};

// Composite objective: CE on the clean pass plus lambda-weighted KL against a
// second pass over the masked input. alpha == 0 short-circuits to plain CE,
// leaving the PRNG untouched by a second pass. With random_mask set, mask
// positions come from that generator instead of the attention ranking.
template <typename T>
LossParts<T> attngen_loss(AttnGenModel<T>& model, const std::vector<std::int32_t>& tokens,
                          const std::vector<std::int32_t>& labels, double alpha, double lambda,
                          bool train, Rng& rng, Rng* random_mask = nullptr) {
    if (lambda < 0.0)
        throw UsageError("attngen_loss: lambda must be nonnegative, got " +
                         std::to_string(lambda));
    LossParts<T> parts;
    ForwardResult<T> clean = forward(model, tokens, train, rng);
    parts.logits = clean.logits;
    parts.ce = cross_entropy(clean.logits, labels);

    if (alpha == 0.0) {
        parts.loss = parts.ce;
        parts.kl = Tensor<T>::scalar(T(0));
        parts.plan.alpha = 0.0;
        parts.plan.indices.resize(clean.attention.batch);
        return parts;
    }

    if (random_mask) {
        const std::size_t k =
            static_cast<std::size_t>(alpha * static_cast<double>(clean.attention.length));
        parts.plan = random_mask_indices(clean.attention.batch, clean.attention.length, k, alpha,
                                         *random_mask);
    } else {
        parts.plan = select_mask_indices(clean.attention, alpha);
    }
    const auto masked = apply_mask(tokens, model.config.sequence_length, parts.plan);
    ForwardResult<T> shadow = forward(model, masked, train, rng);
    parts.kl = kl_divergence(clean.logits, shadow.logits);
    parts.loss = add(parts.ce, scale(parts.kl, static_cast<T>(lambda)));
    return parts;
}

}  // namespace attngen
