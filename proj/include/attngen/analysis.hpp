#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "attngen/data.hpp"
#include "attngen/errors.hpp"
#include "attngen/model.hpp"
#include "attngen/rng.hpp"
#include "attngen/trainer.hpp"

namespace attngen {

// Per-position saliency of one sequence: L2 norms over the embedding width of
// the predicted-logit gradient, plus the positions ordered most-salient-first.
struct ImportanceProfile {
    std::vector<double> scores;
    std::vector<std::size_t> ranking;
};

enum class OcclusionOrder { kHigh, kLow, kRandom };

std::string order_name(OcclusionOrder order);
OcclusionOrder parse_order(const std::string& text);

struct CurveRow {
    std::size_t m = 0;
    double mean_acc = 0.0;  // percent
    double std_dev = 0.0;   // percent, population denominator
    double drop = 0.0;      // percentage points below the first row
};

struct PerturbationCurve {
    OcclusionOrder order = OcclusionOrder::kHigh;
    std::vector<CurveRow> rows;
};

struct AblationArm {
    std::string label;
    double alpha = 0.0;
    double lambda = 0.0;
    bool random_mask = false;
    bool ok = false;
    std::string error;
    TrainResult result;
};

void write_curve_csv(const std::string& path, const PerturbationCurve& curve);
PerturbationCurve load_curve_csv(const std::string& path);
void render_accuracy_curve(const std::string& svg_path, const PerturbationCurve& curve);
void write_mask_pixmap(const std::string& path, std::size_t length,
                       const std::vector<MaskPlan>& plans_per_alpha);
void write_mask_csv(const std::string& path, std::size_t length,
                    const std::vector<double>& alphas,
                    const std::vector<MaskPlan>& plans_per_alpha);
void write_ablation_csv(const std::string& path, const std::vector<AblationArm>& arms);

// Gradient of the predicted-class logit with respect to the embedded input,
// reduced to one L2 norm per position. Ranking is descending by score with
// ties falling to the lower position.
template <typename T>
ImportanceProfile gradient_importance(AttnGenModel<T>& model,
                                      const std::vector<std::int32_t>& tokens) {
    const std::size_t L = model.config.sequence_length;
    const std::size_t d = model.config.embedding_dim;
    if (tokens.size() != L)
        throw ShapeError("gradient_importance: expected one sequence of length " +
                         std::to_string(L) + ", got " + std::to_string(tokens.size()));

    Rng idle(0, 0);
    auto out = forward(model, tokens, false, idle);
    const T* logits = out.logits.values().data();
    const std::size_t predicted = logits[1] > logits[0] ? 1 : 0;
    auto target = select_scalar(out.logits, predicted);
    backward(target);

    ImportanceProfile profile;
    profile.scores.resize(L);
    const auto& grad = out.embeddings.grad();
    for (std::size_t i = 0; i < L; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double g = static_cast<double>(grad[i * d + j]);
            acc += g * g;
        }
        profile.scores[i] = std::sqrt(acc);
    }
    model.zero_grads();

    profile.ranking.resize(L);
    std::iota(profile.ranking.begin(), profile.ranking.end(), std::size_t{0});
    std::stable_sort(profile.ranking.begin(), profile.ranking.end(),
                     [&profile](std::size_t a, std::size_t b) {
                         return profile.scores[a] > profile.scores[b];
                     });
    return profile;
}

namespace detail {

inline double population_std(const std::vector<double>& values, double mean) {
    double acc = 0.0;
    for (double v : values) acc += (v - mean) * (v - mean);
    return std::sqrt(acc / static_cast<double>(values.size()));
}

}  // namespace detail

// Accuracy as progressively more positions are replaced by the pad token.
// Rankings are computed once per sequence on the unperturbed input: saliency
// order for high, reversed-preference order for low, or a per-sequence
// permutation drawn from the occlusion stream for random.
template <typename T>
PerturbationCurve perturbation_curve(AttnGenModel<T>& model, const Corpus& sequences,
                                     const std::vector<std::size_t>& schedule,
                                     OcclusionOrder order, std::uint64_t seed) {
    const std::size_t L = model.config.sequence_length;
    if (sequences.empty()) throw UsageError("perturbation_curve: empty sequence set");
    if (schedule.empty()) throw UsageError("perturbation_curve: empty schedule");
    for (std::size_t i = 0; i < schedule.size(); ++i) {
        if (schedule[i] > L)
            throw UsageError("perturbation_curve: schedule value " +
                             std::to_string(schedule[i]) + " exceeds sequence length " +
                             std::to_string(L));
        if (i > 0 && schedule[i] <= schedule[i - 1])
            throw UsageError("perturbation_curve: schedule must be strictly increasing");
    }

    std::vector<std::vector<std::size_t>> rankings(sequences.size());
    for (std::size_t s = 0; s < sequences.size(); ++s) {
        if (order == OcclusionOrder::kRandom) {
            Rng rng(seed, rng_stream::kOcclusionBase + s);
            rankings[s] = rng.permutation(L);
            continue;
        }
        auto profile = gradient_importance(model, sequences[s].tokens);
        if (order == OcclusionOrder::kHigh) {
            rankings[s] = std::move(profile.ranking);
        } else {
            rankings[s].resize(L);
            std::iota(rankings[s].begin(), rankings[s].end(), std::size_t{0});
            std::stable_sort(rankings[s].begin(), rankings[s].end(),
                             [&profile](std::size_t a, std::size_t b) {
                                 return profile.scores[a] < profile.scores[b];
                             });
        }
    }

    PerturbationCurve curve;
    curve.order = order;
    for (std::size_t m : schedule) {
        Corpus masked = sequences;
        for (std::size_t s = 0; s < masked.size(); ++s)
            for (std::size_t j = 0; j < m; ++j)
                masked[s].tokens[rankings[s][j]] = kPadToken;
        auto eval = evaluate(model, masked);

        std::vector<double> indicators(eval.correct.size());
        for (std::size_t s = 0; s < indicators.size(); ++s)
            indicators[s] = eval.correct[s] ? 100.0 : 0.0;
        CurveRow row;
        row.m = m;
        row.mean_acc = eval.accuracy * 100.0;
        row.std_dev = detail::population_std(indicators, row.mean_acc);
        row.drop = curve.rows.empty() ? 0.0 : curve.rows.front().mean_acc - row.mean_acc;
        curve.rows.push_back(row);
    }
    return curve;
}

// Four training runs from the same initialization and seeds: the full
// objective, random masking with the consistency term, attention masking
// without it, and the unmasked baseline. A failed arm records its error and
// the remaining arms still run.
template <typename T>
std::vector<AblationArm> ablation_suite(const AttnGenConfig& model_cfg, const DatasetSplit& split,
                                        const TrainConfig& base, std::uint64_t model_seed,
                                        std::size_t threads = 1) {
    base.validate();
    if (base.alpha == 0.0)
        throw ConfigError("ablation: base alpha must be positive so the masked arms mask");

    std::vector<AblationArm> arms(4);
    arms[0] = {"Full Method (Attention + KL)", base.alpha, base.lambda, false, false, "", {}};
    arms[1] = {"Random Masking + KL", base.alpha, base.lambda, true, false, "", {}};
    arms[2] = {"Attention Masking (No KL)", base.alpha, 0.0, false, false, "", {}};
    arms[3] = {"Baseline (No Masking)", 0.0, 0.0, false, false, "", {}};

    auto run_arm = [&](AblationArm& arm) {
        try {
            TrainConfig cfg = base;
            cfg.alpha = arm.alpha;
            cfg.lambda = arm.lambda;
            auto model = init_model<T>(model_cfg, model_seed);
            Rng mask_rng(cfg.seed, rng_stream::kRandomMask);
            arm.result = train(model, split, cfg, {}, arm.random_mask ? &mask_rng : nullptr);
            arm.ok = true;
        } catch (const std::exception& e) {
            arm.ok = false;
            arm.error = e.what();
        }
    };

    if (threads <= 1) {
        for (auto& arm : arms) run_arm(arm);
        return arms;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const std::size_t workers = std::min(threads, arms.size());
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&]() {
            for (std::size_t i = next.fetch_add(1); i < arms.size(); i = next.fetch_add(1))
                run_arm(arms[i]);
        });
    for (auto& t : pool) t.join();
    return arms;
}

// Mask layouts for each (alpha, sequence) pair, as both a pixmap and a CSV.
// Pixmap rows follow the CSV order: alpha blocks in the given order, one row
// per sequence inside a block.
template <typename T>
std::vector<MaskPlan> mask_patterns(AttnGenModel<T>& model, const Corpus& sequences,
                                    const std::vector<double>& alphas) {
    if (sequences.empty()) throw UsageError("mask_patterns: empty sequence set");
    if (alphas.empty()) throw UsageError("mask_patterns: empty alpha list");
    const std::size_t L = model.config.sequence_length;

    Batch batch;
    batch.size = sequences.size();
    batch.length = L;
    for (const auto& rec : sequences) {
        if (rec.tokens.size() != L)
            throw ShapeError("mask_patterns: sequence length " + std::to_string(rec.tokens.size()) +
                             " does not match model length " + std::to_string(L));
        batch.tokens.insert(batch.tokens.end(), rec.tokens.begin(), rec.tokens.end());
    }

    auto embedded = embedding_lookup(model.embedding, batch.tokens, batch.size, L);
    auto attention = attention_weights(attention_scores(embedded));
    std::vector<MaskPlan> plans;
    plans.reserve(alphas.size());
    for (double alpha : alphas) plans.push_back(select_mask_indices(attention, alpha));
    return plans;
}

template <typename T>
void render_mask_patterns(AttnGenModel<T>& model, const Corpus& sequences,
                          const std::vector<double>& alphas, const std::string& ppm_path,
                          const std::string& csv_path) {
    auto plans = mask_patterns(model, sequences, alphas);
    write_mask_pixmap(ppm_path, model.config.sequence_length, plans);
    write_mask_csv(csv_path, model.config.sequence_length, alphas, plans);
}

}  // namespace attngen
