#pragma once

#include "autoloop/liegroup.hpp"
#include "autoloop/trajectory.hpp"

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <deque>
#include <filesystem>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace autoloop::loopdb {

using liegroup::Vec3;

struct LocalFeature {
    Eigen::Vector2d position;    // pixels
    Eigen::VectorXd descriptor;  // unit norm
};

using Frame = std::vector<LocalFeature>;

struct GlobalDescriptor {
    Eigen::VectorXd vector;
    bool valid = false;
};

/// K cluster centers stored column-wise (D x K).
struct Codebook {
    Eigen::MatrixXd centers;

    int size() const { return static_cast<int>(centers.cols()); }
    int dim() const { return static_cast<int>(centers.rows()); }
    int nearest(const Eigen::VectorXd& descriptor) const;
};

struct LoopPair {
    std::string scene;
    std::size_t frame_i = 0;
    std::size_t frame_j = 0;
    double similarity = 0.0;
    int inliers = 0;

    auto key() const { return std::tie(scene, frame_i, frame_j); }
};

struct BuildParams {
    double threshold = 0.75;
    std::size_t window = 2000;
    std::size_t exclusion = 100;
    int clusters = 32;
    int min_inliers = 30;
    double ratio = 0.8;
    int ransac_iterations = 2000;
    double sampson_px = 1.0;
    std::size_t codebook_samples = 20000;
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::ordered_json to_json() const;
    static BuildParams from_json(const nlohmann::json& j);
};

struct SceneSummary {
    std::string scene;
    std::size_t frames = 0;
    std::size_t skipped = 0;  // frames without a valid global descriptor
    std::size_t pairs = 0;
};

struct LoopDatabase {
    BuildParams params;
    std::vector<SceneSummary> scenes;
    std::vector<LoopPair> pairs;  // sorted by (scene, i, j), unique

    std::vector<LoopPair> pairs_for(const std::string& scene) const;
};

// Codebook and global description

/// k-means++ seeding followed by Lloyd iterations (at most 100, or until no center moves
/// more than 1e-6). Throws too_few_features when fewer than K distinct descriptors exist.
Codebook build_codebook(std::span<const Eigen::VectorXd> descriptors, int clusters,
                        std::uint64_t seed);

/// Hard-assignment VLAD: per-center residual sums, intra-normalized, then globally normalized.
/// Throws empty_frame for a frame with no features. All-zero residuals give an invalid descriptor.
GlobalDescriptor vlad_descriptor(const Frame& frame, const Codebook& codebook);

/// Cosine similarity clamped to [-1, 1]; 0 when either side is invalid.
double similarity(const GlobalDescriptor& a, const GlobalDescriptor& b);

// Retrieval

struct Candidate {
    std::size_t frame = 0;
    double similarity = 0.0;
};

/// Bounded buffer of recent descriptors. Frames must be added in increasing index order.
class RetrievalIndex {
public:
    explicit RetrievalIndex(std::size_t window = 2000, std::size_t exclusion = 100);

    void add(std::size_t frame, const GlobalDescriptor& descriptor);

    /// Frames f with q - window <= f < q - exclusion and similarity >= threshold,
    /// most similar first, ties to the smaller index.
    std::vector<Candidate> query(std::size_t query_frame, const GlobalDescriptor& descriptor,
                                 double threshold = 0.75) const;

    std::size_t size() const { return entries_.size(); }

private:
    std::size_t window_;
    std::size_t exclusion_;
    std::deque<std::pair<std::size_t, GlobalDescriptor>> entries_;
};

std::vector<Candidate> retrieve_candidates(const RetrievalIndex& index, std::size_t query_frame,
                                           const GlobalDescriptor& descriptor,
                                           double threshold = 0.75);

// Geometric verification

struct VerifyParams {
    int min_inliers = 30;
    double ratio = 0.8;
    int iterations = 2000;
    double sampson_px = 1.0;
    std::uint64_t seed = 0;
};

struct Verification {
    int matches = 0;
    int inliers = 0;
    bool accepted = false;
    std::string reason;
    Eigen::Matrix3d fundamental = Eigen::Matrix3d::Zero();
};

/// Mutual nearest neighbours in descriptor space that also pass the ratio test.
std::vector<std::pair<int, int>> match_features(const Frame& a, const Frame& b, double ratio);

/// Normalized 8-point estimate from at least 8 correspondences (x2^T F x1 = 0), rank 2.
Eigen::Matrix3d estimate_fundamental(std::span<const Eigen::Vector2d> x1,
                                     std::span<const Eigen::Vector2d> x2);

/// First-order geometric error of a correspondence, in the units of the points.
double sampson_distance(const Eigen::Matrix3d& f, const Eigen::Vector2d& x1,
                        const Eigen::Vector2d& x2);

Verification geometric_verify(const Frame& a, const Frame& b, const VerifyParams& params);

// Synthetic scenes

enum class Shape { line, circle };

Shape shape_from_string(const std::string& name);
std::string to_string(Shape s);

struct Camera {
    double f = 300.0;
    double cx = 320.0;
    double cy = 240.0;
    double width = 640.0;
    double height = 480.0;
    double min_depth = 0.5;
    double max_depth = 20.0;

    /// Pixel coordinates of a camera-frame point, or false when it is not visible.
    bool project(const Vec3& p, Eigen::Vector2d& pixel) const;
};

struct SceneSpec {
    std::string id = "scene";
    Shape shape = Shape::line;
    std::size_t frames = 300;
    std::size_t lap_frames = 0;  // circle only: frames per lap, 0 for frames / 2; later laps retrace the first
    std::size_t landmarks = 3600;
    std::size_t clutter = 10;  // unmatched features per frame
    std::vector<std::pair<std::size_t, std::size_t>> revisits;  // (i, j): frame j reuses pose i
    double step = 1.25;
    double descriptor_noise = 0.05;  // RMS norm of the additive descriptor noise
    double pixel_noise = 0.5;
    int descriptor_dim = 16;
    double frame_rate = 10.0;
    std::uint64_t seed = 0;

    /// Throws invalid_spec naming the offending field.
    void validate() const;
    nlohmann::ordered_json to_json() const;
    static SceneSpec from_json(const nlohmann::json& j);
};

struct SyntheticScene {
    SceneSpec spec;
    Camera camera;
    Trajectory ground_truth;
    std::vector<Vec3> landmarks;
    std::vector<Eigen::VectorXd> landmark_descriptors;
    std::vector<std::size_t> place;          // frame whose pose and clutter this frame reuses
    std::vector<std::vector<int>> visible;  // sorted landmark ids per frame
    std::vector<Frame> frames;
    std::vector<std::pair<std::size_t, std::size_t>> revisits;  // all (i < j) with equal place
};

SyntheticScene generate_scene(const SceneSpec& spec);

/// Twenty scenes: three planted revisits on each line scene, every fourth scene a two-lap circle.
std::vector<SceneSpec> standard_corpus_specs();

// Database construction

struct SceneInput {
    std::string id;
    std::vector<Frame> frames;
};

/// Codebook over the whole corpus, then the retrieve/verify pipeline per scene in frame order.
/// Each query frame contributes at most one pair: the most similar candidate that verifies.
LoopDatabase build_database(std::span<const SceneInput> scenes, const BuildParams& params);
LoopDatabase build_database(std::span<const SyntheticScene> scenes, const BuildParams& params);

struct PairScore {
    std::size_t true_positives = 0;
    std::size_t found = 0;
    std::size_t expected = 0;  // query frames with a detectable same-place partner

    double precision() const;
    double recall() const;
};

/// Scores pairs of one scene against the generator's places. A pair is correct when both frames
/// share a place; a frame j is expected when some i < j - exclusion shares its place.
PairScore score_pairs(const SyntheticScene& scene, std::span<const LoopPair> pairs,
                      std::size_t exclusion);

// Files

struct FeatureFile {
    int dim = 0;
    std::vector<Frame> frames;
};

void write_features(const std::filesystem::path& path, std::span<const Frame> frames, int dim);
/// Descriptors are renormalized on read; throws malformed_line with the line number.
FeatureFile read_features(const std::filesystem::path& path);

/// Provenance object on the first line, then one object per pair.
void write_database(const std::filesystem::path& path, const LoopDatabase& db);
LoopDatabase read_database(const std::filesystem::path& path);

/// scene,frames,skipped,pairs
void write_histogram(const std::filesystem::path& path, const LoopDatabase& db);

} // namespace autoloop::loopdb
