#pragma once

#include <stdexcept>
#include <string>

namespace ddae {

// Raised when a loss term or sampler state becomes non-finite.
class DivergenceError : public std::runtime_error {
  public:
    DivergenceError(std::string term, double value);
    const std::string& term() const noexcept { return term_; }

  private:
    std::string term_;
};

// Checkpoint and run config disagree on the noise schedule.
class FingerprintMismatch : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class UnknownSiteError : public std::invalid_argument {
  public:
    UnknownSiteError(const std::string& label, const std::string& vocabulary);
    const std::string& label() const noexcept { return label_; }

  private:
    std::string label_;
};

// Malformed input data (CSV rows, image files, covariates).
class DataError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

}  // namespace ddae
