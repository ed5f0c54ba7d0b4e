#pragma once

#include <stdexcept>
#include <string>

namespace mcddpm {

/// Checkpoint file missing, truncated, or structurally invalid.
class checkpoint_error : public std::runtime_error {
public:
    explicit checkpoint_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Dataset / volume file problems (missing files, bad manifests, bad headers).
class data_error : public std::runtime_error {
public:
    explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Non-finite losses or gradients during optimization.
class numerical_error : public std::runtime_error {
public:
    explicit numerical_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Metric undefined for the given inputs (e.g. AUPRC with no positives).
class metric_error : public std::runtime_error {
public:
    explicit metric_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mcddpm
