#pragma once

#include "autoloop/liegroup.hpp"

#include <filesystem>
#include <vector>

namespace autoloop {

/// Timestamped camera-to-world poses.
struct Trajectory {
    std::vector<double> timestamps;
    std::vector<liegroup::Pose> poses;

    std::size_t size() const { return poses.size(); }
    bool empty() const { return poses.empty(); }

    /// Throws length_mismatch or invalid_spec (timestamps not strictly increasing).
    void validate() const;
};

/// Comment lines (#) and blank lines are skipped.
Trajectory read_tum(const std::filesystem::path& path);
void write_tum(const std::filesystem::path& path, const Trajectory& traj);

} // namespace autoloop
