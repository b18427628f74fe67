#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "attngen/rng.hpp"

namespace attngen {

// Token code 0 is the pad/unknown symbol and the masking substitute;
// A=1, T=2, G=3, C=4.
constexpr std::int32_t kPadToken = 0;
constexpr std::size_t kVocabSize = 5;

struct EncodedSequence {
    std::vector<std::int32_t> tokens;
    std::int32_t label = 0;
};

using Corpus = std::vector<EncodedSequence>;

struct DatasetSplit {
    Corpus train;
    Corpus validation;
    std::uint64_t seed = 0;
};

enum class PositionMode { kUniform, kFixed };

struct SyntheticSpec {
    std::size_t count = 2000;
    std::size_t length = 200;
    std::string motif_class0 = "ATGCCGTA";
    std::string motif_class1 = "TACGGCAT";
    double plant_probability = 1.0;
    PositionMode position_mode = PositionMode::kUniform;
    std::size_t fixed_position = 0;
    std::uint64_t seed = 42;
};

// Planted window per sequence, both ends inclusive; -1/-1 when no motif was
// planted.
struct MotifSpan {
    std::ptrdiff_t start = -1;
    std::ptrdiff_t end = -1;
    bool planted() const { return start >= 0; }
};

struct SyntheticCorpus {
    Corpus sequences;
    std::vector<MotifSpan> truth;
};

struct Batch {
    std::size_t size = 0;
    std::size_t length = 0;
    std::vector<std::int32_t> tokens;  // size x length, row-major
    std::vector<std::int32_t> labels;  // size
};

std::vector<std::int32_t> encode_sequence(const std::string& text, std::size_t length);
std::string decode_sequence(const std::vector<std::int32_t>& tokens);

Corpus load_csv_corpus(const std::string& path, std::size_t length);
void write_csv_corpus(const std::string& path, const Corpus& corpus);
void write_truth_csv(const std::string& path, const Corpus& corpus,
                     const std::vector<MotifSpan>& truth);

DatasetSplit split_corpus(const Corpus& corpus, double fraction_train, std::uint64_t seed);
std::vector<Batch> make_batches(const Corpus& part, std::size_t batch_size, std::uint64_t seed,
                                std::uint64_t epoch);
SyntheticCorpus generate_synthetic(const SyntheticSpec& spec);

}  // namespace attngen
