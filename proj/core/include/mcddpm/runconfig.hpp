#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "mcddpm/model.hpp"
#include "mcddpm/postprocess.hpp"
#include "mcddpm/training.hpp"

namespace mcddpm {

/// Merged run configuration. Defaults follow the reference setup: T=1000,
/// t_test=500, lr=1e-5, batch 8, lambda=0.5, theta=0.2, 5^3 median kernel,
/// 3 erosion iterations, 48x48 patches, linear beta schedule 1e-4..2e-2.
struct RunConfig {
    TrainConfig train;
    ModelConfig model;
    PostprocessParams post;

    TrainConfig make_train() const { return train; }

    /// Flat key=value snapshot with keys sorted, newline-terminated; byte
    /// stable for identical configurations.
    std::string to_key_value() const;

    static RunConfig from_key_value(const std::map<std::string, std::string>& kv);

    /// Applies overrides on top of this config (flags win over file values).
    void apply(const std::map<std::string, std::string>& kv);
};

std::map<std::string, std::string> parse_key_value_text(const std::string& text);
std::map<std::string, std::string> read_key_value_file(const std::filesystem::path& path);

}  // namespace mcddpm
