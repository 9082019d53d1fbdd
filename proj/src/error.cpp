#include "autoloop/error.hpp"

namespace autoloop {

const char* to_string(error_code code) {
    switch (code) {
        case error_code::angle_near_pi: return "AngleNearPi";
        case error_code::malformed_line: return "MalformedLine";
        case error_code::empty_constraints: return "EmptyConstraints";
        case error_code::length_mismatch: return "LengthMismatch";
        case error_code::no_visible_landmarks: return "NoVisibleLandmarks";
        case error_code::dimension_mismatch: return "DimensionMismatch";
        case error_code::insufficient_samples: return "InsufficientSamples";
        case error_code::uninitialized_ema: return "UninitializedEma";
        case error_code::too_few_features: return "TooFewFeatures";
        case error_code::empty_frame: return "EmptyFrame";
        case error_code::invalid_spec: return "InvalidSpec";
        case error_code::no_pairs_in_scene: return "NoPairsInScene";
        case error_code::non_finite_loss: return "NonFiniteLoss";
        case error_code::degenerate_geometry: return "DegenerateGeometry";
        case error_code::association_too_sparse: return "AssociationTooSparse";
        case error_code::experiment_failed: return "ExperimentFailed";
        case error_code::io_error: return "IoError";
    }
    return "Unknown";
}

} // namespace autoloop
