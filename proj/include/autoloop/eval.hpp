#pragma once

#include "autoloop/liegroup.hpp"
#include "autoloop/trajectory.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace autoloop::eval {

using liegroup::Mat3;
using liegroup::Vec3;

enum class AlignMode { rigid, similarity };

/// Accepts "rigid", "sim" and "similarity".
AlignMode align_mode_from_string(const std::string& name);
std::string to_string(AlignMode mode);

/// gt ~ scale * rotation * est + translation
struct Alignment {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
    double scale = 1.0;
    bool degenerate = false;  // rotation (or scale) not uniquely determined

    Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
};

/// Closed-form least squares (Umeyama) with reflection correction. Needs >= 3 points.
Alignment align(std::span<const Vec3> est, std::span<const Vec3> gt, AlignMode mode);
Alignment align(const Trajectory& est, const Trajectory& gt, AlignMode mode);

struct AteReport {
    double rmse = 0.0;
    AlignMode mode = AlignMode::similarity;
    double scale = 1.0;
    bool degenerate = false;
    std::vector<double> timestamps;
    std::vector<double> errors;  // meters, per associated frame

    nlohmann::ordered_json to_json() const;
    void write_json(const std::filesystem::path& path) const;
    /// index,timestamp,error
    void write_errors_csv(const std::filesystem::path& path) const;
};

/// Index-associated ATE. Throws length_mismatch, or association_too_sparse below 3 frames.
AteReport ate(const Trajectory& est, const Trajectory& gt, AlignMode mode);

/// Nearest-timestamp association within `tolerance` seconds; each gt frame is used at most once.
/// Throws association_too_sparse when fewer than 3 frames match.
std::pair<Trajectory, Trajectory> associate(const Trajectory& est, const Trajectory& gt,
                                            double tolerance = 0.02);

AteReport ate_files(const std::filesystem::path& est, const std::filesystem::path& gt,
                    AlignMode mode, double tolerance = 0.02);

/// frames * (descriptor_flops + feature_flops)
double precompute_cost(double frames, double descriptor_flops = 1.2e6,
                       double feature_flops = 3.5e6);

struct RunOutcome {
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    AteReport report;
};

struct MedianSelection {
    std::size_t index = 0;  // into the outcome list
    std::size_t completed = 0;
    bool fallback = false;  // some runs failed
};

/// Median RMSE over completed runs, ties to the lower seed, lower middle for even counts.
/// Throws experiment_failed when fewer than 3 runs completed.
MedianSelection select_median(std::span<const RunOutcome> outcomes);

struct ExperimentResult {
    std::vector<RunOutcome> runs;
    MedianSelection median;

    const AteReport& headline() const { return runs.at(median.index).report; }
    nlohmann::ordered_json to_json() const;
};

/// Calls `run(seed)` for seed0 ... seed0 + runs - 1 and reports the median. `runs` must be odd.
/// Exceptions from a run are recorded as failures.
ExperimentResult run_experiment(const std::function<AteReport(std::uint64_t)>& run,
                                std::uint64_t seed0, std::size_t runs = 5);

} // namespace autoloop::eval
