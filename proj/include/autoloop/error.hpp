#pragma once

#include <stdexcept>
#include <string>

namespace autoloop {

enum class error_code {
    angle_near_pi,
    malformed_line,
    empty_constraints,
    length_mismatch,
    no_visible_landmarks,
    dimension_mismatch,
    insufficient_samples,
    uninitialized_ema,
    too_few_features,
    empty_frame,
    invalid_spec,
    no_pairs_in_scene,
    non_finite_loss,
    degenerate_geometry,
    association_too_sparse,
    experiment_failed,
    io_error,
};

const char* to_string(error_code code);

/// Base exception for every recoverable failure raised by the library.
class error : public std::runtime_error {
public:
    error(error_code code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code),
          detail_(what) {}

    error_code code() const noexcept { return code_; }
    /// The message without the code prefix.
    const std::string& detail() const noexcept { return detail_; }

private:
    error_code code_;
    std::string detail_;
};

} // namespace autoloop
