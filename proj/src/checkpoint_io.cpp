#include "attngen/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace attngen {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'A', 'T', 'N', 'G'};

template <typename T>
void put(std::ofstream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::string& path, const char* what) {
    T value;
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw DataError("checkpoint " + path + ": truncated while reading " + what);
    return value;
}

std::string get_string(std::ifstream& in, const std::string& path, std::uint64_t len,
                       const char* what) {
    std::string s(len, '\0');
    in.read(s.data(), static_cast<std::streamsize>(len));
    if (!in) throw DataError("checkpoint " + path + ": truncated while reading " + what);
    return s;
}

}  // namespace

std::string join_sizes(const std::vector<std::size_t>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(values[i]);
    }
    return out;
}

std::vector<std::size_t> parse_sizes(const std::string& text, const std::string& what) {
    std::vector<std::size_t> out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto comma = text.find(',', pos);
        const std::string item =
            text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        if (item.empty()) throw ConfigError(what + ": empty entry in list '" + text + "'");
        out.push_back(parse_number<std::size_t>(item, what));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    if (out.empty()) throw ConfigError(what + ": empty list");
    return out;
}

void save_checkpoint(const ModelCheckpoint& ckpt, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out.write(kMagic, 4);
    put<std::uint32_t>(out, ckpt.version);

    std::string config_text;
    for (const auto& [k, v] : ckpt.config) config_text += k + " = " + v + "\n";
    put<std::uint64_t>(out, config_text.size());
    out.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));

    for (const auto& rec : ckpt.records) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(rec.name.size()));
        out.write(rec.name.data(), static_cast<std::streamsize>(rec.name.size()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(rec.shape.size()));
        for (std::uint64_t d : rec.shape) put<std::uint64_t>(out, d);
        out.write(reinterpret_cast<const char*>(rec.values.data()),
                  static_cast<std::streamsize>(rec.values.size() * sizeof(float)));
    }
    if (!out) throw DataError("write failed: " + path);
}

ModelCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);

    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("checkpoint " + path + ": bad magic bytes");

    ModelCheckpoint ckpt;
    ckpt.version = get<std::uint32_t>(in, path, "version");
    if (ckpt.version != kCheckpointVersion)
        throw DataError("checkpoint " + path + ": unsupported version " +
                        std::to_string(ckpt.version) + " (expected " +
                        std::to_string(kCheckpointVersion) + ")");

    const auto config_len = get<std::uint64_t>(in, path, "config length");
    const std::string config_text = get_string(in, path, config_len, "config block");
    std::size_t pos = 0;
    while (pos < config_text.size()) {
        auto nl = config_text.find('\n', pos);
        if (nl == std::string::npos) nl = config_text.size();
        const std::string line = config_text.substr(pos, nl - pos);
        pos = nl + 1;
        if (line.empty()) continue;
        const auto sep = line.find(" = ");
        if (sep == std::string::npos)
            throw DataError("checkpoint " + path + ": malformed config line '" + line + "'");
        ckpt.config.emplace_back(line.substr(0, sep), line.substr(sep + 3));
    }

    while (true) {
        std::uint32_t name_len;
        in.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
        if (in.eof()) break;
        if (!in) throw DataError("checkpoint " + path + ": truncated record header");
        CheckpointRecord rec;
        rec.name = get_string(in, path, name_len, "record name");
        const auto rank = get<std::uint32_t>(in, path, "record rank");
        rec.shape.resize(rank);
        for (auto& d : rec.shape) d = get<std::uint64_t>(in, path, "record extent");
        rec.values.resize(rec.numel());
        in.read(reinterpret_cast<char*>(rec.values.data()),
                static_cast<std::streamsize>(rec.values.size() * sizeof(float)));
        if (!in)
            throw DataError("checkpoint " + path + ": truncated values for record '" + rec.name +
                            "'");
        ckpt.records.push_back(std::move(rec));
    }
    return ckpt;
}

}  // namespace attngen
