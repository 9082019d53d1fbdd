#include "autoloop/trajectory.hpp"

#include "autoloop/error.hpp"

#include <fstream>
#include <string>

namespace autoloop {

void Trajectory::validate() const {
    if (timestamps.size() != poses.size()) {
        throw error(error_code::length_mismatch,
                    std::to_string(timestamps.size()) + " timestamps for " +
                        std::to_string(poses.size()) + " poses");
    }
    for (std::size_t i = 1; i < timestamps.size(); ++i) {
        if (!(timestamps[i] > timestamps[i - 1])) {
            throw error(error_code::invalid_spec,
                        "timestamps not strictly increasing at index " + std::to_string(i));
        }
    }
}

Trajectory read_tum(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw error(error_code::io_error, "cannot open " + path.string());
    }
    Trajectory traj;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') {
            continue;
        }
        const auto sp = liegroup::parse_tum_line(line, line_number);
        traj.timestamps.push_back(sp.timestamp);
        traj.poses.push_back(sp.pose);
    }
    traj.validate();
    return traj;
}

void write_tum(const std::filesystem::path& path, const Trajectory& traj) {
    traj.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw error(error_code::io_error, "cannot write " + path.string());
    }
    for (std::size_t i = 0; i < traj.size(); ++i) {
        out << liegroup::format_tum_line({traj.timestamps[i], traj.poses[i]}) << '\n';
    }
}

} // namespace autoloop
