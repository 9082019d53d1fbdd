#include "autoloop/eval.hpp"

#include "autoloop/error.hpp"

#include <Eigen/SVD>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace autoloop::eval {

namespace {

std::vector<Vec3> positions(const Trajectory& t) {
    std::vector<Vec3> out;
    out.reserve(t.size());
    for (const auto& p : t.poses) out.push_back(p.translation);
    return out;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw error(error_code::io_error, "cannot write " + path.string());
    }
    return out;
}

} // namespace

AlignMode align_mode_from_string(const std::string& name) {
    if (name == "rigid") return AlignMode::rigid;
    if (name == "sim" || name == "similarity") return AlignMode::similarity;
    throw error(error_code::invalid_spec, "alignment must be 'rigid' or 'sim', got '" + name + "'");
}

std::string to_string(AlignMode mode) {
    return mode == AlignMode::rigid ? "rigid" : "similarity";
}

Alignment align(std::span<const Vec3> est, std::span<const Vec3> gt, AlignMode mode) {
    if (est.size() != gt.size()) {
        throw error(error_code::length_mismatch, std::to_string(est.size()) + " estimated vs " +
                                                     std::to_string(gt.size()) + " reference points");
    }
    if (est.size() < 3) {
        throw error(error_code::association_too_sparse, "alignment needs at least 3 points");
    }
    const double n = static_cast<double>(est.size());
    Vec3 me = Vec3::Zero();
    Vec3 mg = Vec3::Zero();
    for (std::size_t i = 0; i < est.size(); ++i) {
        me += est[i];
        mg += gt[i];
    }
    me /= n;
    mg /= n;
    Mat3 cov = Mat3::Zero();
    double var_e = 0.0;
    for (std::size_t i = 0; i < est.size(); ++i) {
        const Vec3 e = est[i] - me;
        cov += (gt[i] - mg) * e.transpose();
        var_e += e.squaredNorm();
    }
    cov /= n;
    var_e /= n;

    Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Vec3 s = Vec3::Ones();
    if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) {
        s(2) = -1.0;
    }
    Alignment a;
    a.rotation = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
    const Vec3 d = svd.singularValues();
    a.degenerate = !(d(1) > 1e-12 * std::max(d(0), 1e-300));
    if (mode == AlignMode::similarity) {
        if (var_e > 0.0) {
            a.scale = d.dot(s) / var_e;
        } else {
            a.degenerate = true;
        }
    }
    a.translation = mg - a.scale * (a.rotation * me);
    return a;
}

Alignment align(const Trajectory& est, const Trajectory& gt, AlignMode mode) {
    const auto e = positions(est);
    const auto g = positions(gt);
    return align(e, g, mode);
}

nlohmann::ordered_json AteReport::to_json() const {
    return {{"rmse", rmse},
            {"alignment", to_string(mode)},
            {"scale", scale},
            {"frames", errors.size()},
            {"degenerate", degenerate}};
}

void AteReport::write_json(const std::filesystem::path& path) const {
    auto out = open_out(path);
    out << to_json().dump(2) << '\n';
}

void AteReport::write_errors_csv(const std::filesystem::path& path) const {
    auto out = open_out(path);
    out << "index,timestamp,error\n";
    char buf[96];
    for (std::size_t i = 0; i < errors.size(); ++i) {
        const double t = i < timestamps.size() ? timestamps[i] : 0.0;
        std::snprintf(buf, sizeof buf, "%zu,%.6f,%.9g\n", i, t, errors[i]);
        out << buf;
    }
}

AteReport ate(const Trajectory& est, const Trajectory& gt, AlignMode mode) {
    est.validate();
    gt.validate();
    const auto e = positions(est);
    const auto g = positions(gt);
    const Alignment a = align(e, g, mode);
    if (a.degenerate) {
        spdlog::warn("trajectory alignment is not unique (degenerate geometry)");
    }
    AteReport r;
    r.mode = mode;
    r.scale = a.scale;
    r.degenerate = a.degenerate;
    r.timestamps = gt.timestamps;
    double sum = 0.0;
    for (std::size_t i = 0; i < e.size(); ++i) {
        const double err = (g[i] - a.apply(e[i])).norm();
        r.errors.push_back(err);
        sum += err * err;
    }
    r.rmse = std::sqrt(sum / static_cast<double>(e.size()));
    return r;
}

std::pair<Trajectory, Trajectory> associate(const Trajectory& est, const Trajectory& gt,
                                            double tolerance) {
    est.validate();
    gt.validate();
    Trajectory a, b;
    std::size_t g = 0;
    std::size_t last_used = gt.size();
    for (std::size_t i = 0; i < est.size(); ++i) {
        const double t = est.timestamps[i];
        while (g + 1 < gt.size() && gt.timestamps[g + 1] <= t) ++g;
        std::size_t best = g;
        if (g + 1 < gt.size() &&
            std::abs(gt.timestamps[g + 1] - t) < std::abs(gt.timestamps[g] - t)) {
            best = g + 1;
        }
        if (gt.empty() || std::abs(gt.timestamps[best] - t) > tolerance || best == last_used) {
            continue;
        }
        last_used = best;
        a.timestamps.push_back(t);
        a.poses.push_back(est.poses[i]);
        b.timestamps.push_back(gt.timestamps[best]);
        b.poses.push_back(gt.poses[best]);
    }
    if (a.size() < 3) {
        throw error(error_code::association_too_sparse,
                    std::to_string(a.size()) + " frames matched within " +
                        std::to_string(tolerance) + " s; need at least 3");
    }
    return {a, b};
}

AteReport ate_files(const std::filesystem::path& est, const std::filesystem::path& gt,
                    AlignMode mode, double tolerance) {
    const auto [e, g] = associate(read_tum(est), read_tum(gt), tolerance);
    return ate(e, g, mode);
}

double precompute_cost(double frames, double descriptor_flops, double feature_flops) {
    if (!(frames >= 0.0) || !std::isfinite(frames)) {
        throw error(error_code::invalid_spec, "frame count must be a non-negative number");
    }
    return frames * (descriptor_flops + feature_flops);
}

MedianSelection select_median(std::span<const RunOutcome> outcomes) {
    std::vector<std::size_t> done;
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
        if (outcomes[i].ok) done.push_back(i);
    }
    if (done.size() < 3) {
        throw error(error_code::experiment_failed,
                    std::to_string(done.size()) + " of " + std::to_string(outcomes.size()) +
                        " runs completed; need at least 3");
    }
    std::sort(done.begin(), done.end(), [&](std::size_t a, std::size_t b) {
        const auto& ra = outcomes[a];
        const auto& rb = outcomes[b];
        return ra.report.rmse != rb.report.rmse ? ra.report.rmse < rb.report.rmse
                                                : ra.seed < rb.seed;
    });
    MedianSelection m;
    m.completed = done.size();
    m.index = done[(done.size() - 1) / 2];
    m.fallback = done.size() < outcomes.size();
    return m;
}

nlohmann::ordered_json ExperimentResult::to_json() const {
    nlohmann::ordered_json list = nlohmann::ordered_json::array();
    for (const auto& r : runs) {
        nlohmann::ordered_json item = {{"seed", r.seed}, {"ok", r.ok}};
        if (r.ok) {
            item["report"] = r.report.to_json();
        } else {
            item["error"] = r.error;
        }
        list.push_back(item);
    }
    return {{"median", headline().to_json()},
            {"median_seed", runs.at(median.index).seed},
            {"completed", median.completed},
            {"fallback", median.fallback},
            {"runs", list}};
}

ExperimentResult run_experiment(const std::function<AteReport(std::uint64_t)>& run,
                                std::uint64_t seed0, std::size_t runs) {
    if (runs == 0 || runs % 2 == 0) {
        throw error(error_code::invalid_spec, "number of runs must be odd");
    }
    ExperimentResult result;
    for (std::size_t r = 0; r < runs; ++r) {
        RunOutcome o;
        o.seed = seed0 + r;
        try {
            o.report = run(o.seed);
            o.ok = true;
        } catch (const std::exception& e) {
            o.error = e.what();
            spdlog::warn("run with seed {} failed: {}", o.seed, e.what());
        }
        result.runs.push_back(std::move(o));
    }
    result.median = select_median(result.runs);
    if (result.median.fallback) {
        spdlog::warn("median taken over {} of {} runs", result.median.completed, runs);
    }
    return result;
}

} // namespace autoloop::eval
