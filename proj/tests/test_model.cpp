#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <set>

#include "attngen/gradcheck.hpp"
#include "attngen/model.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace attngen;

namespace {

AttnGenConfig tiny_config() {
    AttnGenConfig cfg;
    cfg.sequence_length = 12;
    cfg.embedding_dim = 4;
    cfg.kernel = 3;
    cfg.channels = {3, 2};
    cfg.fc_hidden = 5;
    return cfg;
}

std::vector<std::int32_t> random_tokens(std::size_t n, Rng& rng, std::size_t vocab = 5) {
    std::vector<std::int32_t> out(n);
    for (auto& t : out) t = static_cast<std::int32_t>(rng.bounded(vocab));
    return out;
}

// Direct log-softmax recomputation used to cross-check composite losses.
std::vector<double> log_softmax_row(const std::vector<double>& row) {
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double z = 0;
    for (double v : row) z += std::exp(v - mx);
    std::vector<double> out(row.size());
    for (std::size_t i = 0; i < row.size(); ++i) out[i] = row[i] - mx - std::log(z);
    return out;
}

}  // namespace

TEST_CASE("default configuration yields the documented stage arithmetic") {
    AttnGenConfig cfg;
    CHECK(cfg.stage_lengths() == std::vector<std::size_t>{200, 100, 50, 25});
    CHECK(cfg.flatten_width() == 100);
    CHECK(cfg.pad_left() == 3);
    CHECK(cfg.pad_right() == 4);

    SUBCASE("invalid fields are rejected") {
        AttnGenConfig bad = cfg;
        bad.dropout_p = 1.0;
        CHECK_THROWS_AS(bad.validate(), ConfigError);
        bad = cfg;
        bad.classes = 3;
        CHECK_THROWS_AS(bad.validate(), ConfigError);
        bad = cfg;
        bad.channels = {32, 16, 4, 2, 1, 1, 1, 1};
        CHECK_THROWS_AS(bad.validate(), ConfigError);
        bad = cfg;
        bad.channels.clear();
        CHECK_THROWS_AS(bad.validate(), ConfigError);
    }
}

TEST_CASE("init_model is seed-deterministic with neutral normalization and bounded weights") {
    AttnGenConfig cfg;
    auto a = init_model<float>(cfg, 42);
    auto b = init_model<float>(cfg, 42);
    CHECK(a.embedding.values() == b.embedding.values());
    for (std::size_t i = 0; i < a.conv_w.size(); ++i)
        CHECK(a.conv_w[i].values() == b.conv_w[i].values());
    CHECK(a.fc1_w.values() == b.fc1_w.values());
    CHECK(a.fc2_w.values() == b.fc2_w.values());

    auto c = init_model<float>(cfg, 43);
    CHECK(a.embedding.values() != c.embedding.values());

    for (std::size_t i = 0; i < a.bn_gamma.size(); ++i) {
        for (float g : a.bn_gamma[i].values()) CHECK(g == 1.0f);
        for (float be : a.bn_beta[i].values()) CHECK(be == 0.0f);
        for (float m : a.bn_mean[i]) CHECK(m == 0.0f);
        for (float v : a.bn_var[i]) CHECK(v == 1.0f);
    }
    for (float v : a.conv_b[0].values()) CHECK(v == 0.0f);

    const float bound = std::sqrt(6.0f / (128.0f * 8.0f));
    for (float w : a.conv_w[0].values()) {
        CHECK(w <= bound);
        CHECK(w >= -bound);
    }
    for (float e : a.embedding.values()) {
        CHECK(e <= 0.1f);
        CHECK(e >= -0.1f);
    }

    SUBCASE("the parameter list is stable and flags decay correctly") {
        auto params = a.parameters();
        REQUIRE(params.size() == 1 + 3 * 4 + 4);
        CHECK(params[0].name == "embedding");
        CHECK(params[0].decay);
        CHECK(params[1].name == "conv1.weight");
        CHECK(params[1].decay);
        CHECK(params[2].name == "conv1.bias");
        CHECK_FALSE(params[2].decay);
        CHECK(params[3].name == "bn1.gamma");
        CHECK_FALSE(params[3].decay);
        CHECK(params.back().name == "fc2.bias");
        CHECK_FALSE(params.back().decay);
    }
}

TEST_CASE("attention scores are per-position embedding means") {
    auto emb = Tensor64::from({1, 2, 2}, {2.0, 4.0, 0.0, 0.0});
    auto map = attention_scores(emb);
    CHECK(map.scores == std::vector<double>{3.0, 0.0});

    SUBCASE("an all-equal embedding gives a constant row") {
        auto flat = Tensor64::full({1, 5, 3}, 0.7);
        auto m = attention_scores(flat);
        for (double s : m.scores) CHECK(s == doctest::Approx(0.7));
    }

    SUBCASE("random tensors match the naive mean oracle") {
        Rng rng(11, 0);
        for (int trial = 0; trial < 100; ++trial) {
            const std::size_t B = 1 + rng.bounded(3), L = 1 + rng.bounded(6),
                              d = 1 + rng.bounded(5);
            auto e = testutil::random_tensor<double>({B, L, d}, rng);
            auto m = attention_scores(e);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t i = 0; i < L; ++i) {
                    double acc = 0;
                    for (std::size_t j = 0; j < d; ++j)
                        acc += e.values()[(b * L + i) * d + j];
                    CHECK(m.scores[b * L + i] ==
                          doctest::Approx(acc / static_cast<double>(d)).epsilon(1e-6));
                }
        }
    }

    SUBCASE("equal tokens receive bit-equal scores through the real pipeline") {
        auto model = init_model<double>(tiny_config(), 3);
        std::vector<std::int32_t> tokens = {2, 1, 2, 4, 2, 0, 1, 2, 3, 2, 0, 2};
        Rng rng(5, 0);
        auto out = forward(model, tokens, false, rng);
        const auto& s = out.attention.scores;
        for (std::size_t i = 0; i < tokens.size(); ++i)
            for (std::size_t j = i + 1; j < tokens.size(); ++j)
                if (tokens[i] == tokens[j]) CHECK(s[i] == s[j]);
    }
}

TEST_CASE("attention weights are a shift-invariant row softmax") {
    AttentionMap<double> map;
    map.batch = 1;
    map.length = 200;
    map.scores.assign(200, 1.7);
    auto w = attention_weights(map);
    for (double v : w.weights) CHECK(v == doctest::Approx(0.005).epsilon(1e-12));

    map.length = 2;
    map.scores = {0.0, std::log(3.0)};
    w = attention_weights(map);
    CHECK(w.weights[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(w.weights[1] == doctest::Approx(0.75).epsilon(1e-12));

    auto shifted = map;
    for (auto& s : shifted.scores) s += 7.0;
    auto w2 = attention_weights(shifted);
    CHECK(w2.weights[0] == doctest::Approx(w.weights[0]).epsilon(1e-12));
    CHECK(w2.weights[1] == doctest::Approx(w.weights[1]).epsilon(1e-12));

    SUBCASE("rows sum to one for harsh score ranges") {
        Rng rng(12, 0);
        AttentionMap<double> wide;
        wide.batch = 4;
        wide.length = 50;
        wide.scores.resize(200);
        for (auto& s : wide.scores) s = rng.symmetric(100.0);
        auto ww = attention_weights(wide);
        for (std::size_t b = 0; b < 4; ++b) {
            double total = 0;
            for (std::size_t i = 0; i < 50; ++i) {
                CHECK(ww.weights[b * 50 + i] > 0.0);
                total += ww.weights[b * 50 + i];
            }
            CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

namespace {

// Exhaustive minimal-sum subset search; ties resolved to the
// lexicographically smallest ascending index list.
std::vector<std::size_t> brute_force_mask(const std::vector<double>& weights, std::size_t k) {
    const std::size_t L = weights.size();
    std::vector<std::size_t> best;
    double best_sum = 0;
    for (std::uint32_t mask = 0; mask < (1u << L); ++mask) {
        if (static_cast<std::size_t>(__builtin_popcount(mask)) != k) continue;
        std::vector<std::size_t> idx;
        double s = 0;
        for (std::size_t i = 0; i < L; ++i)
            if (mask & (1u << i)) {
                idx.push_back(i);
                s += weights[i];
            }
        if (best.empty() && k > 0) {
            best = idx;
            best_sum = s;
        } else if (k > 0 && (s < best_sum || (s == best_sum && idx < best))) {
            best = idx;
            best_sum = s;
        }
    }
    return best;
}

}  // namespace

TEST_CASE("mask selection picks the k lowest weights with positional tie-breaks") {
    AttentionMap<double> map;
    map.batch = 1;
    map.length = 4;
    map.weights = {0.1, 0.4, 0.2, 0.3};
    auto plan = select_mask_indices(map, 0.5);
    CHECK(plan.k == 2);
    CHECK(plan.indices[0] == std::vector<std::size_t>{0, 2});

    map.weights = {0.25, 0.25, 0.25, 0.25};
    plan = select_mask_indices(map, 0.5);
    CHECK(plan.indices[0] == std::vector<std::size_t>{0, 1});

    SUBCASE("k follows the floor rule at full length") {
        AttentionMap<double> wide;
        wide.batch = 1;
        wide.length = 200;
        wide.weights.assign(200, 0.005);
        CHECK(select_mask_indices(wide, 0.1).k == 20);
        CHECK(select_mask_indices(wide, 0.0).k == 0);
        CHECK(select_mask_indices(wide, 1.0).k == 200);
        CHECK_THROWS_AS(select_mask_indices(wide, 1.5), UsageError);
        CHECK_THROWS_AS(select_mask_indices(wide, -0.1), UsageError);
    }

    SUBCASE("selection equals exhaustive minimal-sum search on small instances") {
        Rng rng(13, 0);
        for (int trial = 0; trial < 200; ++trial) {
            const std::size_t L = 1 + rng.bounded(12);
            AttentionMap<double> m;
            m.batch = 1;
            m.length = L;
            m.weights.resize(L);
            // eighths make subset sums exact, so ties really collide
            for (auto& w : m.weights) w = static_cast<double>(rng.bounded(8)) / 8.0;
            const double alpha = static_cast<double>(rng.bounded(101)) / 100.0;
            auto got = select_mask_indices(m, alpha);
            CHECK(got.k == static_cast<std::size_t>(alpha * static_cast<double>(L)));
            CHECK(got.indices[0] == brute_force_mask(m.weights, got.k));
        }
    }
}

TEST_CASE("apply_mask zeroes exactly the planned positions without mutating input") {
    const std::vector<std::int32_t> tokens = {1, 2, 3, 4};
    MaskPlan plan;
    plan.k = 2;
    plan.indices = {{1, 3}};
    CHECK(apply_mask(tokens, 4, plan) == std::vector<std::int32_t>{1, 0, 3, 0});
    CHECK(tokens == std::vector<std::int32_t>{1, 2, 3, 4});

    MaskPlan empty;
    empty.indices = {{}};
    CHECK(apply_mask(tokens, 4, empty) == tokens);

    MaskPlan full;
    full.k = 4;
    full.indices = {{0, 1, 2, 3}};
    CHECK(apply_mask(tokens, 4, full) == std::vector<std::int32_t>{0, 0, 0, 0});

    MaskPlan bad;
    bad.indices = {{4}};
    CHECK_THROWS_AS(apply_mask(tokens, 4, bad), UsageError);
    MaskPlan wrong_batch;
    wrong_batch.indices = {{0}, {1}};
    CHECK_THROWS_AS(apply_mask(tokens, 4, wrong_batch), ShapeError);

    SUBCASE("exactly k positions change when no token is already the pad") {
        Rng rng(14, 0);
        std::vector<std::int32_t> seq(12);
        for (auto& t : seq) t = 1 + static_cast<std::int32_t>(rng.bounded(4));
        MaskPlan p;
        p.k = 5;
        p.indices = {{0, 3, 4, 9, 11}};
        auto masked = apply_mask(seq, 12, p);
        std::size_t changed = 0;
        for (std::size_t i = 0; i < 12; ++i)
            if (masked[i] != seq[i]) ++changed;
        CHECK(changed == 5);
    }
}

TEST_CASE("forward produces the contracted shapes and is pure in eval mode") {
    AttnGenConfig cfg;
    auto model = init_model<float>(cfg, 42);
    Rng data_rng(21, 0);
    auto tokens = random_tokens(2 * 200, data_rng);
    Rng rng(22, 0);
    auto out = forward(model, tokens, false, rng);
    CHECK(out.logits.shape() == Shape{2, 2});
    CHECK(out.attention.batch == 2);
    CHECK(out.attention.length == 200);
    CHECK(out.embeddings.shape() == Shape{2, 200, 128});

    SUBCASE("identical rows give identical logits") {
        std::vector<std::int32_t> dup = tokens;
        std::copy(tokens.begin(), tokens.begin() + 200, dup.begin() + 200);
        auto r = forward(model, dup, false, rng);
        for (int c = 0; c < 2; ++c)
            CHECK(r.logits.values()[c] == r.logits.values()[2 + c]);
    }

    SUBCASE("eval forward neither consumes randomness nor mutates running stats") {
        const auto stats_before = model.bn_mean;
        Rng r1(9, 9), r2(9, 9);
        auto a = forward(model, tokens, false, r1);
        auto b = forward(model, tokens, false, r2);
        CHECK(a.logits.values() == b.logits.values());
        CHECK(r1.next() == r2.next());
        CHECK(model.bn_mean == stats_before);
    }

    SUBCASE("train forward updates running statistics") {
        const auto stats_before = model.bn_mean;
        forward(model, tokens, true, rng);
        CHECK(model.bn_mean != stats_before);
    }

    SUBCASE("misaligned token buffers are rejected") {
        std::vector<std::int32_t> short_buf(150, 1);
        CHECK_THROWS_AS(forward(model, short_buf, false, rng), ShapeError);
    }
}

TEST_CASE("composite loss reduces to cross-entropy when masking is disabled") {
    auto cfg = tiny_config();
    Rng data_rng(31, 0);
    auto tokens = random_tokens(4 * cfg.sequence_length, data_rng);
    std::vector<std::int32_t> labels = {0, 1, 1, 0};

    SUBCASE("alpha zero short-circuits and leaves the generator untouched") {
        auto model = init_model<double>(cfg, 7);
        Rng rng(1, 1);
        auto parts = attngen_loss(model, tokens, labels, 0.0, 0.5, false, rng);
        CHECK(parts.kl.item() == 0.0);
        CHECK(parts.loss.node() == parts.ce.node());
        Rng fresh(1, 1);
        CHECK(rng.next() == fresh.next());
    }

    SUBCASE("lambda zero leaves the loss value equal to the cross-entropy") {
        auto model = init_model<double>(cfg, 7);
        Rng rng(1, 1);
        auto parts = attngen_loss(model, tokens, labels, 0.25, 0.0, false, rng);
        CHECK(parts.kl.item() > 0.0);
        CHECK(parts.loss.item() == parts.ce.item());
    }

    SUBCASE("negative lambda is rejected") {
        auto model = init_model<double>(cfg, 7);
        Rng rng(1, 1);
        CHECK_THROWS_AS(attngen_loss(model, tokens, labels, 0.1, -0.5, false, rng), UsageError);
    }
}

TEST_CASE("composite loss recomposes from independently recomputed parts") {
    auto cfg = tiny_config();
    Rng data_rng(32, 0);
    auto tokens = random_tokens(3 * cfg.sequence_length, data_rng);
    std::vector<std::int32_t> labels = {1, 0, 1};
    const double alpha = 0.25, lambda = 0.1;

    auto model = init_model<double>(cfg, 9);
    Rng rng(2, 2);
    auto parts = attngen_loss(model, tokens, labels, alpha, lambda, false, rng);

    auto oracle_model = init_model<double>(cfg, 9);
    Rng oracle_rng(2, 2);
    auto clean = forward(oracle_model, tokens, false, oracle_rng);
    auto plan = select_mask_indices(clean.attention, alpha);
    auto masked = apply_mask(tokens, cfg.sequence_length, plan);
    auto shadow = forward(oracle_model, masked, false, oracle_rng);

    double ce = 0, kl = 0;
    for (std::size_t b = 0; b < labels.size(); ++b) {
        std::vector<double> crow(clean.logits.values().begin() + b * 2,
                                 clean.logits.values().begin() + b * 2 + 2);
        std::vector<double> srow(shadow.logits.values().begin() + b * 2,
                                 shadow.logits.values().begin() + b * 2 + 2);
        auto lp = log_softmax_row(crow);
        auto lq = log_softmax_row(srow);
        ce -= lp[static_cast<std::size_t>(labels[b])];
        for (int c = 0; c < 2; ++c) kl += std::exp(lp[c]) * (lp[c] - lq[c]);
    }
    ce /= 3.0;
    kl /= 3.0;
    CHECK(parts.ce.item() == doctest::Approx(ce).epsilon(1e-5));
    CHECK(parts.kl.item() == doctest::Approx(kl).epsilon(1e-5));
    CHECK(parts.loss.item() == doctest::Approx(ce + lambda * kl).epsilon(1e-5));
    CHECK(parts.kl.item() >= 0.0);
    CHECK(parts.plan.k == static_cast<std::size_t>(alpha * 12.0));

    SUBCASE("gradients reach the embedding through both passes") {
        auto m2 = init_model<double>(cfg, 9);
        Rng r2(2, 2);
        auto p2 = attngen_loss(m2, tokens, labels, alpha, lambda, true, r2);
        backward(p2.loss);
        double total = 0;
        for (double g : m2.embedding.grad()) total += std::abs(g);
        CHECK(total > 0.0);
    }
}

TEST_CASE("random mask plans ignore attention and keep the requested size") {
    auto cfg = tiny_config();
    Rng data_rng(33, 0);
    auto tokens = random_tokens(2 * cfg.sequence_length, data_rng);
    std::vector<std::int32_t> labels = {0, 1};
    auto model = init_model<double>(cfg, 5);
    Rng rng(3, 3);
    Rng mask_rng(3, rng_stream::kRandomMask);
    auto parts = attngen_loss(model, tokens, labels, 0.5, 0.1, false, rng, &mask_rng);
    CHECK(parts.plan.k == 6);
    for (const auto& idx : parts.plan.indices) {
        CHECK(idx.size() == 6);
        std::set<std::size_t> uniq(idx.begin(), idx.end());
        CHECK(uniq.size() == 6);
        CHECK(*uniq.rbegin() < 12);
        CHECK(std::is_sorted(idx.begin(), idx.end()));
    }
}

TEST_CASE("full composite loss passes a 64-bit central-difference check") {
    auto cfg = tiny_config();
    Rng data_rng(34, 0);
    auto tokens = random_tokens(3 * cfg.sequence_length, data_rng);
    std::vector<std::int32_t> labels = {1, 0, 1};
    auto model = init_model<double>(cfg, 17);
    const auto mean0 = model.bn_mean;
    const auto var0 = model.bn_var;

    auto loss_fn = [&](Tensor64&) {
        model.bn_mean = mean0;
        model.bn_var = var0;
        Rng rng(99, rng_stream::kTrain);
        auto parts = attngen_loss(model, tokens, labels, 0.25, 0.1, true, rng);
        return parts.loss;
    };

    const double h = 1e-5, tol = 1e-4;
    std::function<Tensor64(Tensor64&)> f = loss_fn;
    CHECK(grad_check(f, model.embedding, h) <= tol);
    CHECK(grad_check(f, model.conv_w[0], h, {0, 5, 11, 17, 23}) <= tol);
    CHECK(grad_check(f, model.bn_gamma[1], h) <= tol);
    CHECK(grad_check(f, model.fc1_w, h, {0, 7, 13, 19}) <= tol);
    CHECK(grad_check(f, model.fc2_b, h) <= tol);
}
