#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "attngen/checkpoint.hpp"
#include "attngen/data.hpp"
#include "attngen/errors.hpp"
#include "attngen/model.hpp"
#include "attngen/optim.hpp"
#include "attngen/textio.hpp"

namespace attngen {

struct TrainConfig {
    double lr = 0.001;
    std::size_t batch = 64;
    double weight_decay = 1e-4;
    double lambda = 0.1;
    double alpha = 0.1;
    std::size_t max_epochs = 50;
    std::size_t patience = 10;
    double clip_norm = 1.0;
    std::uint64_t seed = 42;
    std::string precision = "f32";

    // alpha == 0 disables the masked pass entirely, so the KL weight is
    // forced to 0 to keep the reduced objective exact.
    TrainConfig normalized() const {
        TrainConfig out = *this;
        if (out.alpha == 0.0) out.lambda = 0.0;
        return out;
    }

    void validate() const {
        if (lr < 0.0) throw ConfigError("train: lr must be nonnegative");
        if (batch < 1) throw ConfigError("train: batch must be at least 1");
        if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be nonnegative");
        if (lambda < 0.0) throw ConfigError("train: lambda must be nonnegative");
        if (alpha < 0.0 || alpha > 1.0)
            throw ConfigError("train: alpha must lie in [0, 1], got " + std::to_string(alpha));
        if (max_epochs < 1) throw ConfigError("train: max_epochs must be at least 1");
        if (patience < 1) throw ConfigError("train: patience must be at least 1");
        if (clip_norm <= 0.0) throw ConfigError("train: clip_norm must be positive");
        if (precision != "f32" && precision != "f64")
            throw ConfigError("train: precision must be f32 or f64, got " + precision);
    }
};

struct EpochMetrics {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0, train_ce = 0, train_kl = 0, train_acc = 0;
    double val_loss = 0, val_acc = 0;
    double grad_norm = 0;      // mean pre-clip norm over the epoch's batches
    double wall_seconds = 0;   // in-memory only; the CSV stores a fixed 0.000
    bool stability_warning = false;
};

struct TrainResult {
    ModelCheckpoint best;
    std::vector<EpochMetrics> history;
    std::size_t best_epoch = 0;  // 1-based
    double best_val_acc = 0.0;
    std::size_t epochs_run = 0;
    // First epoch whose validation accuracy reaches 99% of the best run
    // accuracy; a simple convergence-speed readout.
    std::size_t convergence_epoch = 0;
};

struct EvalResult {
    double accuracy = 0.0;
    std::vector<std::uint8_t> correct;  // per-sequence 0/1 indicators
    std::array<double, 2> mean_probs = {0.0, 0.0};
    double loss = 0.0;  // mean eval-mode cross-entropy
};

using MetricsSink = std::function<void(const EpochMetrics&)>;

namespace detail {

// Argmax over two logits; an exact tie resolves to class 0.
template <typename T>
std::int32_t predict_row(const T* logits) {
    return logits[1] > logits[0] ? 1 : 0;
}

inline std::vector<Batch> ordered_batches(const Corpus& part, std::size_t batch_size) {
    std::vector<Batch> batches;
    if (part.empty()) return batches;
    const std::size_t length = part[0].tokens.size();
    for (std::size_t start = 0; start < part.size(); start += batch_size) {
        const std::size_t n = std::min(batch_size, part.size() - start);
        Batch b;
        b.size = n;
        b.length = length;
        for (std::size_t i = 0; i < n; ++i) {
            const auto& rec = part[start + i];
            b.tokens.insert(b.tokens.end(), rec.tokens.begin(), rec.tokens.end());
            b.labels.push_back(rec.label);
        }
        batches.push_back(std::move(b));
    }
    return batches;
}

}  // namespace detail

// Eval-mode accuracy, per-sequence indicators, mean class probabilities, and
// mean cross-entropy. Rows are processed in corpus order; no randomness is
// consumed.
template <typename T>
EvalResult evaluate(AttnGenModel<T>& model, const Corpus& sequences,
                    std::size_t batch_size = 64) {
    if (sequences.empty()) throw UsageError("evaluate: empty sequence set");
    EvalResult result;
    result.correct.reserve(sequences.size());
    Rng idle(0, 0);
    double ce_sum = 0;
    for (const auto& batch : detail::ordered_batches(sequences, batch_size)) {
        auto out = forward(model, batch.tokens, false, idle);
        ce_sum += static_cast<double>(cross_entropy(out.logits, batch.labels).item()) *
                  static_cast<double>(batch.size);
        const T* logits = out.logits.values().data();
        for (std::size_t i = 0; i < batch.size; ++i) {
            const T* row = logits + i * 2;
            result.correct.push_back(detail::predict_row(row) == batch.labels[i] ? 1 : 0);
            const T mx = std::max(row[0], row[1]);
            const T e0 = std::exp(row[0] - mx), e1 = std::exp(row[1] - mx);
            result.mean_probs[0] += static_cast<double>(e0 / (e0 + e1));
            result.mean_probs[1] += static_cast<double>(e1 / (e0 + e1));
        }
    }
    const double n = static_cast<double>(sequences.size());
    std::size_t hits = 0;
    for (auto c : result.correct) hits += c;
    result.accuracy = static_cast<double>(hits) / n;
    result.mean_probs[0] /= n;
    result.mean_probs[1] /= n;
    result.loss = ce_sum / n;
    return result;
}

// Counts how many epochs at the tail of the history strictly increased the
// validation loss; a run of 3 or more flags instability.
inline std::size_t trailing_val_loss_rises(const std::vector<double>& val_losses) {
    std::size_t rises = 0;
    for (std::size_t i = val_losses.size(); i >= 2; --i) {
        if (val_losses[i - 1] > val_losses[i - 2])
            ++rises;
        else
            break;
    }
    return rises;
}

constexpr std::size_t kStabilityRunLength = 3;

// Mini-batch loop: composite loss, backward, clip, Adam, grad reset; one
// validation pass per epoch; early stopping on strictly-better validation
// accuracy with the configured patience. Returns the best epoch's snapshot.
template <typename T>
TrainResult train(AttnGenModel<T>& model, const DatasetSplit& split, const TrainConfig& cfg_in,
                  const MetricsSink& sink = {}, Rng* random_mask = nullptr) {
    cfg_in.validate();
    const TrainConfig cfg = cfg_in.normalized();
    if (split.train.empty() || split.validation.empty())
        throw DataError("train: both split parts must be nonempty");

    auto params = model.parameters();
    AdamState<T> adam;
    Rng train_rng(cfg.seed, rng_stream::kTrain);

    auto snapshot_config = [&]() {
        std::vector<std::pair<std::string, std::string>> kv = {
            {"lr", fmt_float(cfg.lr)},
            {"batch", std::to_string(cfg.batch)},
            {"weight_decay", fmt_float(cfg.weight_decay)},
            {"lambda", fmt_float(cfg.lambda)},
            {"alpha", fmt_float(cfg.alpha)},
            {"max_epochs", std::to_string(cfg.max_epochs)},
            {"patience", std::to_string(cfg.patience)},
            {"clip_norm", fmt_float(cfg.clip_norm)},
            {"seed", std::to_string(cfg.seed)},
            {"precision", cfg.precision},
        };
        return kv;
    };

    TrainResult result;
    std::vector<double> val_losses;
    std::size_t since_improve = 0;

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const auto epoch_start = std::chrono::steady_clock::now();
        double loss_sum = 0, ce_sum = 0, kl_sum = 0, norm_sum = 0;
        std::size_t seen = 0, train_hits = 0, batch_count = 0;

        auto batches = make_batches(split.train, cfg.batch, cfg.seed, epoch - 1);
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            const Batch& batch = batches[bi];
            auto parts = attngen_loss(model, batch.tokens, batch.labels, cfg.alpha, cfg.lambda,
                                      true, train_rng, random_mask);
            const double loss_value = static_cast<double>(parts.loss.item());
            if (!std::isfinite(loss_value))
                throw NumericalError("non-finite training loss at epoch " +
                                     std::to_string(epoch) + ", batch " + std::to_string(bi + 1));
            backward(parts.loss);
            norm_sum += static_cast<double>(clip_grad_norm(params, static_cast<T>(cfg.clip_norm)));
            adam_step(params, adam, static_cast<T>(cfg.lr), T(0.9), T(0.999), T(1e-8),
                      static_cast<T>(cfg.weight_decay));
            model.zero_grads();

            const double n = static_cast<double>(batch.size);
            loss_sum += loss_value * n;
            ce_sum += static_cast<double>(parts.ce.item()) * n;
            kl_sum += static_cast<double>(parts.kl.item()) * n;
            const T* logits = parts.logits.values().data();
            for (std::size_t i = 0; i < batch.size; ++i)
                if (detail::predict_row(logits + i * 2) == batch.labels[i]) ++train_hits;
            seen += batch.size;
            ++batch_count;
        }

        auto val = evaluate(model, split.validation, cfg.batch);
        val_losses.push_back(val.loss);

        EpochMetrics m;
        m.epoch = epoch;
        m.train_loss = loss_sum / static_cast<double>(seen);
        m.train_ce = ce_sum / static_cast<double>(seen);
        m.train_kl = kl_sum / static_cast<double>(seen);
        m.train_acc = static_cast<double>(train_hits) / static_cast<double>(seen);
        m.val_loss = val.loss;
        m.val_acc = val.accuracy;
        m.grad_norm = norm_sum / static_cast<double>(batch_count);
        m.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
        m.stability_warning = trailing_val_loss_rises(val_losses) >= kStabilityRunLength;
        result.history.push_back(m);
        if (sink) sink(m);

        if (val.accuracy > result.best_val_acc || result.best_epoch == 0) {
            result.best_val_acc = val.accuracy;
            result.best_epoch = epoch;
            since_improve = 0;
            result.best =
                build_checkpoint(model, adam, hex_words(train_rng.state()), val.accuracy,
                                 snapshot_config());
        } else {
            ++since_improve;
            if (since_improve >= cfg.patience) break;
        }
    }

    result.epochs_run = result.history.size();
    for (const auto& m : result.history) {
        if (m.val_acc >= 0.99 * result.best_val_acc) {
            result.convergence_epoch = m.epoch;
            break;
        }
    }
    return result;
}

// Metrics CSV. The seconds column is a fixed placeholder so identical runs
// serialize to identical bytes; true wall time stays on EpochMetrics.
inline void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& history) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write metrics file: " + path);
    out << "epoch,train_loss,train_ce,train_kl,train_acc,val_loss,val_acc,grad_norm,seconds\n";
    for (const auto& m : history) {
        out << m.epoch << ',' << fmt_float(m.train_loss) << ',' << fmt_float(m.train_ce) << ','
            << fmt_float(m.train_kl) << ',' << fmt_float(m.train_acc) << ','
            << fmt_float(m.val_loss) << ',' << fmt_float(m.val_acc) << ','
            << fmt_float(m.grad_norm) << ",0.000\n";
    }
    if (!out) throw DataError("write failed: " + path);
}

}  // namespace attngen
