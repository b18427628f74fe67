#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <map>
#include <set>

#include "attngen/data.hpp"
#include "attngen/errors.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace attngen;
using testutil::TempDir;

TEST_CASE("encode_sequence maps nucleotides and right-pads with zeros") {
    CHECK(encode_sequence("ATGC", 4) == std::vector<std::int32_t>{1, 2, 3, 4});
    CHECK(encode_sequence("AN", 4) == std::vector<std::int32_t>{1, 0, 0, 0});
    CHECK(encode_sequence("atgcn", 5) == std::vector<std::int32_t>{1, 2, 3, 4, 0});
    CHECK(encode_sequence("", 3) == std::vector<std::int32_t>{0, 0, 0});
    CHECK_THROWS_WITH_AS(encode_sequence("ATX", 4), doctest::Contains("position 3"), DataError);
    CHECK_THROWS_AS(encode_sequence("ATGCC", 4), DataError);
}

TEST_CASE("decode inverts encode up to padding") {
    const std::string text = "ATGCN";
    CHECK(decode_sequence(encode_sequence(text, 8)) == "ATGCNNNN");
    CHECK_THROWS_AS(decode_sequence({5}), DataError);
    CHECK_THROWS_AS(decode_sequence({-1}), DataError);
}

TEST_CASE("csv corpus loading preserves order and validates rows") {
    TempDir dir("csv");
    const std::string path = dir.file("corpus.csv");

    SUBCASE("two rows load in file order") {
        testutil::write_text(path, "sequence,label\nATGC,0\nCCGG,1\n");
        auto corpus = load_csv_corpus(path, 4);
        REQUIRE(corpus.size() == 2);
        CHECK(corpus[0].tokens == std::vector<std::int32_t>{1, 2, 3, 4});
        CHECK(corpus[0].label == 0);
        CHECK(corpus[1].tokens == std::vector<std::int32_t>{4, 4, 3, 3});
        CHECK(corpus[1].label == 1);
    }

    SUBCASE("empty data section is an empty corpus") {
        testutil::write_text(path, "sequence,label\n");
        CHECK(load_csv_corpus(path, 4).empty());
    }

    SUBCASE("carriage returns are tolerated") {
        testutil::write_text(path, "sequence,label\r\nATGC,1\r\n");
        auto corpus = load_csv_corpus(path, 4);
        REQUIRE(corpus.size() == 1);
        CHECK(corpus[0].label == 1);
    }

    SUBCASE("missing file is a data error") {
        CHECK_THROWS_AS(load_csv_corpus(dir.file("absent.csv"), 4), DataError);
    }

    SUBCASE("wrong header is rejected") {
        testutil::write_text(path, "seq,y\nATGC,0\n");
        CHECK_THROWS_WITH_AS(load_csv_corpus(path, 4), doctest::Contains(":1:"), DataError);
    }

    SUBCASE("bad label names the line") {
        testutil::write_text(path, "sequence,label\nATGC,0\nATGC,2\n");
        CHECK_THROWS_WITH_AS(load_csv_corpus(path, 4), doctest::Contains(":3:"), DataError);
    }

    SUBCASE("bad character names the line") {
        testutil::write_text(path, "sequence,label\nATXC,0\n");
        CHECK_THROWS_WITH_AS(load_csv_corpus(path, 4), doctest::Contains(":2:"), DataError);
    }

    SUBCASE("extra comma is rejected") {
        testutil::write_text(path, "sequence,label\nAT,GC,0\n");
        CHECK_THROWS_AS(load_csv_corpus(path, 4), DataError);
    }

    SUBCASE("writer output loads back identically") {
        Corpus corpus;
        corpus.push_back({encode_sequence("ATGCN", 6), 0});
        corpus.push_back({encode_sequence("GGGTTT", 6), 1});
        write_csv_corpus(path, corpus);
        auto loaded = load_csv_corpus(path, 6);
        REQUIRE(loaded.size() == 2);
        CHECK(loaded[0].tokens == corpus[0].tokens);
        CHECK(loaded[1].tokens == corpus[1].tokens);
        CHECK(loaded[1].label == 1);
    }
}

namespace {

// Corpus of distinct sequences so index identity can be recovered from
// content: sequence i spells the base-4 digits of i.
Corpus numbered_corpus(std::size_t n, std::size_t length) {
    Corpus corpus;
    for (std::size_t i = 0; i < n; ++i) {
        EncodedSequence rec;
        rec.tokens.assign(length, 1);
        std::size_t v = i;
        for (std::size_t j = 0; j < length && v > 0; ++j, v /= 4)
            rec.tokens[j] = 1 + static_cast<std::int32_t>(v % 4);
        rec.label = static_cast<std::int32_t>(i % 2);
        corpus.push_back(std::move(rec));
    }
    return corpus;
}

std::multiset<std::vector<std::int32_t>> token_multiset(const Corpus& c) {
    std::multiset<std::vector<std::int32_t>> out;
    for (const auto& rec : c) out.insert(rec.tokens);
    return out;
}

}  // namespace

TEST_CASE("split_corpus stratifies, partitions, and is seed-deterministic") {
    auto corpus = numbered_corpus(100, 8);
    auto split = split_corpus(corpus, 0.8, 42);
    CHECK(split.train.size() == 80);
    CHECK(split.validation.size() == 20);
    for (const Corpus* part : {&split.train, &split.validation}) {
        std::size_t ones = 0;
        for (const auto& rec : *part) ones += static_cast<std::size_t>(rec.label);
        CHECK(ones * 2 == part->size());
    }

    SUBCASE("train and validation cover the corpus exactly once") {
        auto all = token_multiset(corpus);
        auto got = token_multiset(split.train);
        for (const auto& rec : split.validation) got.insert(rec.tokens);
        CHECK(got == all);
    }

    SUBCASE("same seed reproduces the assignment") {
        auto again = split_corpus(corpus, 0.8, 42);
        CHECK(token_multiset(again.train) == token_multiset(split.train));
    }

    SUBCASE("different seeds give different assignments") {
        auto other = split_corpus(corpus, 0.8, 43);
        CHECK(token_multiset(other.train) != token_multiset(split.train));
    }

    SUBCASE("degenerate classes and fractions are rejected") {
        CHECK_THROWS_AS(split_corpus(corpus, 0.0, 1), ConfigError);
        CHECK_THROWS_AS(split_corpus(corpus, 1.0, 1), ConfigError);
        Corpus lop;
        lop.push_back({encode_sequence("AAAA", 4), 0});
        lop.push_back({encode_sequence("TTTT", 4), 0});
        lop.push_back({encode_sequence("GGGG", 4), 1});
        CHECK_THROWS_WITH_AS(split_corpus(lop, 0.5, 1), doctest::Contains("class 1"), DataError);
    }
}

TEST_CASE("make_batches shuffles per epoch and keeps the partial tail") {
    auto corpus = numbered_corpus(130, 8);
    auto batches = make_batches(corpus, 64, 42, 0);
    REQUIRE(batches.size() == 3);
    CHECK(batches[0].size == 64);
    CHECK(batches[1].size == 64);
    CHECK(batches[2].size == 2);
    CHECK(batches[0].tokens.size() == 64 * 8);
    CHECK(batches[2].labels.size() == 2);

    SUBCASE("fixed seed and epoch reproduce batch composition") {
        auto again = make_batches(corpus, 64, 42, 0);
        for (std::size_t b = 0; b < batches.size(); ++b) {
            CHECK(again[b].tokens == batches[b].tokens);
            CHECK(again[b].labels == batches[b].labels);
        }
    }

    SUBCASE("consecutive epochs permute differently") {
        auto next = make_batches(corpus, 64, 42, 1);
        CHECK(next[0].tokens != batches[0].tokens);
    }

    SUBCASE("empty input and zero batch size") {
        CHECK(make_batches({}, 64, 42, 0).empty());
        CHECK_THROWS_AS(make_batches(corpus, 0, 42, 0), UsageError);
    }
}

TEST_CASE("synthetic corpus plants class motifs at recorded positions") {
    SyntheticSpec spec;
    spec.count = 1000;
    spec.length = 40;
    spec.seed = 42;

    SUBCASE("labels are balanced and spans match motif length") {
        auto synth = generate_synthetic(spec);
        REQUIRE(synth.sequences.size() == 1000);
        REQUIRE(synth.truth.size() == 1000);
        std::size_t ones = 0;
        for (const auto& rec : synth.sequences) ones += static_cast<std::size_t>(rec.label);
        CHECK(ones == 500);
        for (std::size_t i = 0; i < synth.sequences.size(); ++i) {
            const auto& span = synth.truth[i];
            REQUIRE(span.planted());
            CHECK(span.end - span.start + 1 == 8);
            const std::string& motif =
                synth.sequences[i].label == 0 ? spec.motif_class0 : spec.motif_class1;
            const auto window = std::vector<std::int32_t>(
                synth.sequences[i].tokens.begin() + span.start,
                synth.sequences[i].tokens.begin() + span.end + 1);
            CHECK(window == encode_sequence(motif, motif.size()));
        }
    }

    SUBCASE("fixed position zero pins the motif to the head") {
        spec.position_mode = PositionMode::kFixed;
        spec.motif_class0 = "ATGCATGC";
        spec.motif_class1 = "ATGCATGC";
        auto synth = generate_synthetic(spec);
        const std::vector<std::int32_t> head = {1, 2, 3, 4, 1, 2, 3, 4};
        for (const auto& rec : synth.sequences) {
            const auto got =
                std::vector<std::int32_t>(rec.tokens.begin(), rec.tokens.begin() + 8);
            CHECK(got == head);
        }
    }

    SUBCASE("background tokens are near-uniform over the four nucleotides") {
        spec.count = 2000;
        spec.length = 100;
        auto synth = generate_synthetic(spec);
        std::map<std::int32_t, std::size_t> freq;
        std::size_t total = 0;
        for (std::size_t i = 0; i < synth.sequences.size(); ++i) {
            const auto& span = synth.truth[i];
            const auto& tokens = synth.sequences[i].tokens;
            for (std::size_t j = 0; j < tokens.size(); ++j) {
                if (span.planted() && static_cast<std::ptrdiff_t>(j) >= span.start &&
                    static_cast<std::ptrdiff_t>(j) <= span.end)
                    continue;
                ++freq[tokens[j]];
                ++total;
            }
        }
        REQUIRE(total > 100000);
        for (std::int32_t t = 1; t <= 4; ++t) {
            const double f = static_cast<double>(freq[t]) / static_cast<double>(total);
            CHECK(f > 0.23);
            CHECK(f < 0.27);
        }
        CHECK(freq.count(0) == 0);
    }

    SUBCASE("unplanted sequences are marked with -1 spans") {
        spec.plant_probability = 0.5;
        spec.count = 2000;
        auto synth = generate_synthetic(spec);
        std::size_t planted = 0;
        for (const auto& span : synth.truth) {
            if (span.planted())
                ++planted;
            else
                CHECK(span.end == -1);
        }
        CHECK(planted > 900);
        CHECK(planted < 1100);
    }

    SUBCASE("every sequence carries its own class motif when planting always fires") {
        auto synth = generate_synthetic(spec);
        std::size_t cross_hits = 0;
        for (const auto& rec : synth.sequences) {
            const std::string text = decode_sequence(rec.tokens);
            const std::string& own = rec.label == 0 ? spec.motif_class0 : spec.motif_class1;
            const std::string& other = rec.label == 0 ? spec.motif_class1 : spec.motif_class0;
            CHECK(text.find(own) != std::string::npos);
            if (text.find(other) != std::string::npos) ++cross_hits;
        }
        CHECK(cross_hits * 100 < spec.count);
    }

    SUBCASE("repeat generation is bit-identical") {
        auto a = generate_synthetic(spec);
        auto b = generate_synthetic(spec);
        for (std::size_t i = 0; i < a.sequences.size(); ++i) {
            CHECK(a.sequences[i].tokens == b.sequences[i].tokens);
            CHECK(a.truth[i].start == b.truth[i].start);
        }
    }

    SUBCASE("invalid specs are rejected") {
        SyntheticSpec bad = spec;
        bad.motif_class0 = "ATGN";
        CHECK_THROWS_AS(generate_synthetic(bad), ConfigError);
        bad = spec;
        bad.motif_class1 = "";
        CHECK_THROWS_AS(generate_synthetic(bad), ConfigError);
        bad = spec;
        bad.length = 4;
        CHECK_THROWS_AS(generate_synthetic(bad), ConfigError);
        bad = spec;
        bad.plant_probability = 0.0;
        CHECK_THROWS_AS(generate_synthetic(bad), ConfigError);
        bad = spec;
        bad.position_mode = PositionMode::kFixed;
        bad.fixed_position = 39;
        CHECK_THROWS_AS(generate_synthetic(bad), ConfigError);
    }
}

TEST_CASE("truth sidecar rows mirror the corpus") {
    TempDir dir("truth");
    SyntheticSpec spec;
    spec.count = 4;
    spec.length = 12;
    spec.plant_probability = 0.5;
    spec.seed = 7;
    auto synth = generate_synthetic(spec);
    const std::string path = dir.file("truth.csv");
    write_truth_csv(path, synth.sequences, synth.truth);
    const std::string text = testutil::read_text(path);
    CHECK(text.rfind("index,label,motif_start,motif_end\n", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 5);

    std::vector<MotifSpan> short_truth(3);
    CHECK_THROWS_AS(write_truth_csv(path, synth.sequences, short_truth), DataError);
}
