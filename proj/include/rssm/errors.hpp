#pragma once

#include <optional>
#include <stdexcept>
#include <string>

namespace rssm {

/// Input data or configuration violates a documented contract.
/// Maps to CLI exit code 2.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// A numerical operation failed (non-invertible innovation covariance,
/// underflowed forward pass, non-finite objective). Carries position
/// context where available. Maps to CLI exit code 3.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what,
                            std::optional<std::size_t> time_index = std::nullopt,
                            std::optional<int> regime = std::nullopt,
                            std::optional<std::size_t> iteration = std::nullopt)
        : std::runtime_error(format(what, time_index, regime, iteration)),
          time_index_(time_index),
          regime_(regime),
          iteration_(iteration) {}

    std::optional<std::size_t> time_index() const { return time_index_; }
    std::optional<int> regime() const { return regime_; }
    std::optional<std::size_t> iteration() const { return iteration_; }

private:
    static std::string format(const std::string& what,
                              std::optional<std::size_t> t,
                              std::optional<int> s,
                              std::optional<std::size_t> k) {
        std::string msg = what;
        if (t) msg += " (t=" + std::to_string(*t) + ")";
        if (s) msg += " (regime=" + std::to_string(*s) + ")";
        if (k) msg += " (iteration=" + std::to_string(*k) + ")";
        return msg;
    }

    std::optional<std::size_t> time_index_;
    std::optional<int> regime_;
    std::optional<std::size_t> iteration_;
};

}  // namespace rssm
