#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "attngen/data.hpp"
#include "attngen/model.hpp"
#include "attngen/trainer.hpp"

namespace attngen {

struct KeySpec {
    const char* key;
    const char* default_value;
    const char* help;
};

// Flat key/value run settings: registry defaults, then config-file values,
// then flag overrides. Unknown keys are rejected by name wherever they enter.
class RunConfig {
  public:
    static const std::vector<KeySpec>& registry();

    RunConfig();

    void load_file(const std::string& path);
    void set(const std::string& key, const std::string& value);
    const std::string& get(const std::string& key) const;

    double get_double(const std::string& key) const;
    std::size_t get_size(const std::string& key) const;
    std::uint64_t get_u64(const std::string& key) const;
    std::vector<std::size_t> get_size_list(const std::string& key) const;
    std::vector<double> get_double_list(const std::string& key) const;

    // Snapshot in registry order, one "key = value" line per key.
    void write_snapshot(const std::string& path) const;

    AttnGenConfig model_config() const;
    TrainConfig train_config() const;
    SyntheticSpec synthetic_spec() const;

  private:
    std::map<std::string, std::string> values_;
};

}  // namespace attngen
