#include "autoloop/error.hpp"
#include "autoloop/loopdb.hpp"

#include <Eigen/Geometry>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>

namespace autoloop::loopdb {

using liegroup::Pose;
using liegroup::Rotation;

namespace {

Eigen::VectorXd random_unit(std::mt19937_64& rng, int dim) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::VectorXd v(dim);
    do {
        for (int i = 0; i < dim; ++i) v(i) = n(rng);
    } while (!(v.norm() > 1e-12));
    return v.normalized();
}

Pose heading_pose(const Vec3& position, double yaw, double pitch) {
    const Eigen::Matrix3d r =
        (Eigen::AngleAxisd(yaw, Vec3::UnitY()) * Eigen::AngleAxisd(pitch, Vec3::UnitX()))
            .toRotationMatrix();
    return {Rotation::from_matrix(r), position};
}

std::size_t lap_length(const SceneSpec& s) {
    return s.lap_frames != 0 ? s.lap_frames : s.frames / 2;
}

// Pose of the path at a place index; a function of the place only, so revisits are bit-identical.
Pose path_pose(const SceneSpec& s, std::size_t place) {
    const double k = static_cast<double>(place);
    if (s.shape == Shape::line) {
        const double period = 40.0;
        const double amp = 3.0;
        const double w = 2.0 * std::numbers::pi / period;
        const Vec3 p(amp * std::sin(w * k), 0.3 * std::sin(k / 7.0), s.step * k);
        const double yaw = std::atan2(amp * w * std::cos(w * k), s.step);
        return heading_pose(p, yaw, 0.05 * std::sin(k / 5.0));
    }
    const double lap = static_cast<double>(lap_length(s));
    const double theta = 2.0 * std::numbers::pi * k / lap;
    const double radius = lap * s.step / (2.0 * std::numbers::pi);
    const Vec3 p(radius * (1.0 - std::cos(theta)), 0.3 * std::sin(3.0 * theta),
                 radius * std::sin(theta));
    return heading_pose(p, theta, 0.05 * std::sin(2.0 * theta));
}

Eigen::Vector2d noisy(const Eigen::Vector2d& px, double sigma, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    const double dx = n(rng);
    const double dy = n(rng);
    return px + sigma * Eigen::Vector2d(dx, dy);
}

// Isotropic noise whose expected norm is sigma.
Eigen::VectorXd noisy(const Eigen::VectorXd& d, double sigma, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    const double per_axis = sigma / std::sqrt(static_cast<double>(d.size()));
    Eigen::VectorXd v = d;
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) += per_axis * n(rng);
    const double len = v.norm();
    return len > 1e-12 ? Eigen::VectorXd(v / len) : d;
}

bool filename_safe(const std::string& id) {
    return !id.empty() && std::all_of(id.begin(), id.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
    });
}

} // namespace

Shape shape_from_string(const std::string& name) {
    if (name == "line") return Shape::line;
    if (name == "circle") return Shape::circle;
    throw error(error_code::invalid_spec, "shape must be 'line' or 'circle', got '" + name + "'");
}

std::string to_string(Shape s) {
    return s == Shape::line ? "line" : "circle";
}

bool Camera::project(const Vec3& p, Eigen::Vector2d& pixel) const {
    if (p.z() < min_depth || p.z() > max_depth) {
        return false;
    }
    const double u = f * p.x() / p.z() + cx;
    const double v = f * p.y() / p.z() + cy;
    if (u < 0.0 || u >= width || v < 0.0 || v >= height) {
        return false;
    }
    pixel = {u, v};
    return true;
}

void SceneSpec::validate() const {
    auto bad = [this](const std::string& field, const std::string& why) {
        throw error(error_code::invalid_spec, "scene '" + id + "': " + field + " " + why);
    };
    if (!filename_safe(id)) bad("id", "must be non-empty and use only [A-Za-z0-9_.-]");
    if (frames < 2) bad("frames", "must be at least 2");
    if (landmarks == 0) bad("landmarks", "must be positive");
    if (descriptor_dim < 2) bad("descriptor_dim", "must be at least 2");
    if (!(step > 0.0) || !std::isfinite(step)) bad("step", "must be positive");
    if (!(descriptor_noise >= 0.0) || !std::isfinite(descriptor_noise)) {
        bad("descriptor_noise", "must be non-negative");
    }
    if (!(pixel_noise >= 0.0) || !std::isfinite(pixel_noise)) bad("pixel_noise", "must be non-negative");
    if (!(frame_rate > 0.0) || !std::isfinite(frame_rate)) bad("frame_rate", "must be positive");
    if (shape == Shape::circle) {
        const auto lap = lap_length(*this);
        if (lap < 3 || lap > frames) bad("lap_frames", "must lie in [3, frames]");
    }
    std::vector<bool> target(frames, false);
    for (const auto& [i, j] : revisits) {
        const std::string pair = "(" + std::to_string(i) + ", " + std::to_string(j) + ")";
        if (!(i < j && j < frames)) bad("revisits", pair + " needs i < j < frames");
        if (target[j]) bad("revisits", pair + " reuses frame " + std::to_string(j));
        target[j] = true;
    }
    for (const auto& [i, j] : revisits) {
        if (target[i]) bad("revisits", "frame " + std::to_string(i) + " is itself a revisit");
    }
}

nlohmann::ordered_json SceneSpec::to_json() const {
    nlohmann::ordered_json r = nlohmann::ordered_json::array();
    for (const auto& [i, j] : revisits) r.push_back({i, j});
    return {{"id", id},
            {"shape", to_string(shape)},
            {"frames", frames},
            {"lap_frames", lap_frames},
            {"landmarks", landmarks},
            {"clutter", clutter},
            {"revisits", r},
            {"step", step},
            {"descriptor_noise", descriptor_noise},
            {"pixel_noise", pixel_noise},
            {"descriptor_dim", descriptor_dim},
            {"frame_rate", frame_rate},
            {"seed", seed}};
}

SceneSpec SceneSpec::from_json(const nlohmann::json& j) {
    static const std::vector<std::string> known = {
        "id", "shape", "frames", "lap_frames", "landmarks", "clutter", "revisits", "step",
        "descriptor_noise", "pixel_noise", "descriptor_dim", "frame_rate", "seed"};
    if (!j.is_object()) {
        throw error(error_code::invalid_spec, "scene spec must be a JSON object");
    }
    for (const auto& [key, value] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw error(error_code::invalid_spec, "unknown scene field '" + key + "'");
        }
    }
    SceneSpec s;
    try {
        s.id = j.value("id", s.id);
        s.shape = shape_from_string(j.value("shape", to_string(s.shape)));
        s.frames = j.value("frames", s.frames);
        s.lap_frames = j.value("lap_frames", s.lap_frames);
        s.landmarks = j.value("landmarks", s.landmarks);
        s.clutter = j.value("clutter", s.clutter);
        if (j.contains("revisits")) {
            for (const auto& r : j.at("revisits")) {
                s.revisits.emplace_back(r.at(0).get<std::size_t>(), r.at(1).get<std::size_t>());
            }
        }
        s.step = j.value("step", s.step);
        s.descriptor_noise = j.value("descriptor_noise", s.descriptor_noise);
        s.pixel_noise = j.value("pixel_noise", s.pixel_noise);
        s.descriptor_dim = j.value("descriptor_dim", s.descriptor_dim);
        s.frame_rate = j.value("frame_rate", s.frame_rate);
        s.seed = j.value("seed", s.seed);
    } catch (const nlohmann::json::exception& e) {
        throw error(error_code::invalid_spec, std::string("scene spec: ") + e.what());
    }
    return s;
}

SyntheticScene generate_scene(const SceneSpec& spec) {
    spec.validate();
    SyntheticScene scene;
    scene.spec = spec;
    const std::size_t n = spec.frames;

    scene.place.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        scene.place[k] = spec.shape == Shape::circle ? k % lap_length(spec) : k;
    }
    for (const auto& [i, j] : spec.revisits) {
        scene.place[j] = scene.place[i];
    }

    std::map<std::size_t, Pose> place_pose;
    for (auto p : scene.place) {
        place_pose.try_emplace(p, path_pose(spec, p));
    }
    for (std::size_t k = 0; k < n; ++k) {
        scene.ground_truth.timestamps.push_back(static_cast<double>(k) / spec.frame_rate);
        scene.ground_truth.poses.push_back(place_pose.at(scene.place[k]));
    }

    std::mt19937_64 rng(spec.seed);
    const Camera& cam = scene.camera;
    const std::size_t places = place_pose.size();
    std::size_t slot = 0;
    for (const auto& [p, pose] : place_pose) {
        const std::size_t count = spec.landmarks / places + (slot < spec.landmarks % places ? 1 : 0);
        ++slot;
        std::uniform_real_distribution<double> uu(0.0, cam.width);
        std::uniform_real_distribution<double> uv(0.0, cam.height);
        std::uniform_real_distribution<double> uz(3.0, 15.0);
        for (std::size_t c = 0; c < count; ++c) {
            const double u = uu(rng);
            const double v = uv(rng);
            const double z = uz(rng);
            const Vec3 local((u - cam.cx) * z / cam.f, (v - cam.cy) * z / cam.f, z);
            scene.landmarks.push_back(pose.transform(local));
            scene.landmark_descriptors.push_back(random_unit(rng, spec.descriptor_dim));
        }
    }

    std::map<std::size_t, std::vector<int>> place_visible;
    std::map<std::size_t, std::vector<Eigen::Vector2d>> place_pixels;
    for (const auto& [p, pose] : place_pose) {
        const Pose w2c = liegroup::inverse(pose);
        auto& vis = place_visible[p];
        auto& px = place_pixels[p];
        for (std::size_t l = 0; l < scene.landmarks.size(); ++l) {
            Eigen::Vector2d pixel;
            if (cam.project(w2c.transform(scene.landmarks[l]), pixel)) {
                vis.push_back(static_cast<int>(l));
                px.push_back(pixel);
            }
        }
    }

    // Clutter belongs to the viewpoint, so a revisit sees the same clutter.
    std::map<std::size_t, Frame> place_clutter;
    for (const auto& [p, pose] : place_pose) {
        std::seed_seq seq{spec.seed, static_cast<std::uint64_t>(p), std::uint64_t{0xC1}};
        std::mt19937_64 crng(seq);
        std::uniform_real_distribution<double> uu(0.0, cam.width);
        std::uniform_real_distribution<double> uv(0.0, cam.height);
        auto& frame = place_clutter[p];
        for (std::size_t c = 0; c < spec.clutter; ++c) {
            const double u = uu(crng);
            const double v = uv(crng);
            frame.push_back({{u, v}, random_unit(crng, spec.descriptor_dim)});
        }
    }

    scene.visible.resize(n);
    scene.frames.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        const auto p = scene.place[k];
        scene.visible[k] = place_visible.at(p);
        const auto& px = place_pixels.at(p);
        Frame& frame = scene.frames[k];
        for (std::size_t v = 0; v < px.size(); ++v) {
            const auto l = static_cast<std::size_t>(scene.visible[k][v]);
            const Eigen::Vector2d pos = noisy(px[v], spec.pixel_noise, rng);
            frame.push_back({pos, noisy(scene.landmark_descriptors[l], spec.descriptor_noise, rng)});
        }
        for (const auto& c : place_clutter.at(p)) {
            const Eigen::Vector2d pos = noisy(c.position, spec.pixel_noise, rng);
            frame.push_back({pos, noisy(c.descriptor, spec.descriptor_noise, rng)});
        }
    }

    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < j; ++i) {
            if (scene.place[i] == scene.place[j]) {
                scene.revisits.emplace_back(i, j);
            }
        }
    }
    std::sort(scene.revisits.begin(), scene.revisits.end());
    return scene;
}

std::vector<SceneSpec> standard_corpus_specs() {
    std::vector<SceneSpec> out;
    for (std::size_t s = 0; s < 20; ++s) {
        SceneSpec sp;
        sp.id = fmt::format("scene{:02}", s);
        sp.seed = 100 + s;
        if (s % 4 == 3) {
            sp.shape = Shape::circle;
            sp.lap_frames = 150;
        } else {
            sp.revisits = {{10 + s, 150 + s}, {60, 200}, {120, 290}};
        }
        out.push_back(sp);
    }
    return out;
}

} // namespace autoloop::loopdb
