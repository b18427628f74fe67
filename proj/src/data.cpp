#include "attngen/data.hpp"

#include <algorithm>
#include <array>
#include <fstream>

#include "attngen/errors.hpp"

namespace attngen {

namespace {

std::int32_t token_of(char c) {
    switch (c) {
        case 'A': case 'a': return 1;
        case 'T': case 't': return 2;
        case 'G': case 'g': return 3;
        case 'C': case 'c': return 4;
        case 'N': case 'n': return 0;
        default: return -1;
    }
}

constexpr std::array<char, 5> kTokenChars = {'N', 'A', 'T', 'G', 'C'};

void strip_cr(std::string& line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace

std::vector<std::int32_t> encode_sequence(const std::string& text, std::size_t length) {
    if (text.size() > length)
        throw DataError("encode_sequence: input of length " + std::to_string(text.size()) +
                        " exceeds target length " + std::to_string(length));
    std::vector<std::int32_t> tokens(length, kPadToken);
    for (std::size_t i = 0; i < text.size(); ++i) {
        const std::int32_t t = token_of(text[i]);
        if (t < 0)
            throw DataError("encode_sequence: invalid character '" + std::string(1, text[i]) +
                            "' at position " + std::to_string(i + 1));
        tokens[i] = t;
    }
    return tokens;
}

std::string decode_sequence(const std::vector<std::int32_t>& tokens) {
    std::string out;
    out.reserve(tokens.size());
    for (std::int32_t t : tokens) {
        if (t < 0 || t >= static_cast<std::int32_t>(kTokenChars.size()))
            throw DataError("decode_sequence: token " + std::to_string(t) + " out of range");
        out.push_back(kTokenChars[static_cast<std::size_t>(t)]);
    }
    return out;
}

Corpus load_csv_corpus(const std::string& path, std::size_t length) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open corpus file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError(path + ":1: missing header line");
    strip_cr(line);
    if (line != "sequence,label")
        throw DataError(path + ":1: expected header \"sequence,label\", got \"" + line + "\"");

    Corpus corpus;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        strip_cr(line);
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos)
            throw DataError(path + ":" + std::to_string(line_no) +
                            ": expected exactly one comma separating sequence and label");
        const std::string seq = line.substr(0, comma);
        const std::string label = line.substr(comma + 1);
        if (label != "0" && label != "1")
            throw DataError(path + ":" + std::to_string(line_no) + ": label must be 0 or 1, got \"" +
                            label + "\"");
        EncodedSequence rec;
        try {
            rec.tokens = encode_sequence(seq, length);
        } catch (const DataError& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        rec.label = label == "1" ? 1 : 0;
        corpus.push_back(std::move(rec));
    }
    return corpus;
}

void write_csv_corpus(const std::string& path, const Corpus& corpus) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write corpus file: " + path);
    out << "sequence,label\n";
    for (const auto& rec : corpus)
        out << decode_sequence(rec.tokens) << ',' << rec.label << '\n';
    if (!out) throw DataError("write failed: " + path);
}

void write_truth_csv(const std::string& path, const Corpus& corpus,
                     const std::vector<MotifSpan>& truth) {
    if (corpus.size() != truth.size())
        throw DataError("truth table rows (" + std::to_string(truth.size()) +
                        ") do not match corpus size (" + std::to_string(corpus.size()) + ")");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write truth file: " + path);
    out << "index,label,motif_start,motif_end\n";
    for (std::size_t i = 0; i < corpus.size(); ++i)
        out << i << ',' << corpus[i].label << ',' << truth[i].start << ',' << truth[i].end << '\n';
    if (!out) throw DataError("write failed: " + path);
}

DatasetSplit split_corpus(const Corpus& corpus, double fraction_train, std::uint64_t seed) {
    if (!(fraction_train > 0.0 && fraction_train < 1.0))
        throw ConfigError("split_corpus: fraction_train must lie in (0, 1), got " +
                          std::to_string(fraction_train));
    std::array<std::vector<std::size_t>, 2> by_class;
    for (std::size_t i = 0; i < corpus.size(); ++i)
        by_class[static_cast<std::size_t>(corpus[i].label)].push_back(i);
    for (int c = 0; c < 2; ++c)
        if (by_class[c].size() < 2)
            throw DataError("split_corpus: class " + std::to_string(c) + " has " +
                            std::to_string(by_class[c].size()) +
                            " members; stratification needs at least 2 per class");

    Rng rng(seed, rng_stream::kSplit);
    std::vector<std::size_t> train_idx, val_idx;
    for (auto& idx : by_class) {
        rng.shuffle(idx);
        const std::size_t n_train =
            static_cast<std::size_t>(fraction_train * static_cast<double>(idx.size()));
        train_idx.insert(train_idx.end(), idx.begin(), idx.begin() + n_train);
        val_idx.insert(val_idx.end(), idx.begin() + n_train, idx.end());
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(val_idx.begin(), val_idx.end());

    DatasetSplit split;
    split.seed = seed;
    split.train.reserve(train_idx.size());
    split.validation.reserve(val_idx.size());
    for (std::size_t i : train_idx) split.train.push_back(corpus[i]);
    for (std::size_t i : val_idx) split.validation.push_back(corpus[i]);
    return split;
}

std::vector<Batch> make_batches(const Corpus& part, std::size_t batch_size, std::uint64_t seed,
                                std::uint64_t epoch) {
    if (batch_size < 1) throw UsageError("make_batches: batch_size must be at least 1");
    std::vector<Batch> batches;
    if (part.empty()) return batches;
    const std::size_t length = part[0].tokens.size();

    Rng rng(seed, rng_stream::kEpochBase + epoch);
    const auto perm = rng.permutation(part.size());
    for (std::size_t start = 0; start < part.size(); start += batch_size) {
        const std::size_t n = std::min(batch_size, part.size() - start);
        Batch batch;
        batch.size = n;
        batch.length = length;
        batch.tokens.reserve(n * length);
        batch.labels.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& rec = part[perm[start + i]];
            batch.tokens.insert(batch.tokens.end(), rec.tokens.begin(), rec.tokens.end());
            batch.labels.push_back(rec.label);
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
    for (const std::string* motif : {&spec.motif_class0, &spec.motif_class1}) {
        if (motif->empty())
            throw ConfigError("generate_synthetic: motif must not be empty");
        if (motif->size() > spec.length)
            throw ConfigError("generate_synthetic: motif of length " +
                              std::to_string(motif->size()) + " exceeds sequence length " +
                              std::to_string(spec.length));
        for (char c : *motif)
            if (token_of(c) <= 0)
                throw ConfigError("generate_synthetic: motif may only contain A, C, G, T; got '" +
                                  std::string(1, c) + "'");
    }
    if (!(spec.plant_probability > 0.0 && spec.plant_probability <= 1.0))
        throw ConfigError("generate_synthetic: plant_probability must lie in (0, 1], got " +
                          std::to_string(spec.plant_probability));
    if (spec.position_mode == PositionMode::kFixed) {
        const std::size_t max_len =
            std::max(spec.motif_class0.size(), spec.motif_class1.size());
        if (spec.fixed_position + max_len > spec.length)
            throw ConfigError("generate_synthetic: fixed position " +
                              std::to_string(spec.fixed_position) +
                              " leaves no room for the motif");
    }

    SyntheticCorpus result;
    result.sequences.reserve(spec.count);
    result.truth.reserve(spec.count);
    Rng rng(spec.seed, rng_stream::kSynthesis);
    for (std::size_t i = 0; i < spec.count; ++i) {
        EncodedSequence rec;
        rec.label = static_cast<std::int32_t>(i % 2);
        rec.tokens.resize(spec.length);
        for (auto& t : rec.tokens) t = 1 + static_cast<std::int32_t>(rng.bounded(4));

        MotifSpan span;
        if (rng.real() < spec.plant_probability) {
            const std::string& motif = rec.label == 0 ? spec.motif_class0 : spec.motif_class1;
            std::size_t start = spec.fixed_position;
            if (spec.position_mode == PositionMode::kUniform)
                start = rng.bounded(spec.length - motif.size() + 1);
            for (std::size_t j = 0; j < motif.size(); ++j)
                rec.tokens[start + j] = token_of(motif[j]);
            span.start = static_cast<std::ptrdiff_t>(start);
            span.end = static_cast<std::ptrdiff_t>(start + motif.size() - 1);
        }
        result.sequences.push_back(std::move(rec));
        result.truth.push_back(span);
    }
    return result;
}

}  // namespace attngen
