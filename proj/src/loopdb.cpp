#include "autoloop/loopdb.hpp"

#include "autoloop/error.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <numeric>
#include <random>

namespace autoloop::loopdb {

namespace {

Eigen::MatrixXd stack_descriptors(const Frame& frame) {
    const auto dim = frame.front().descriptor.size();
    Eigen::MatrixXd m(dim, static_cast<Eigen::Index>(frame.size()));
    for (std::size_t i = 0; i < frame.size(); ++i) {
        if (frame[i].descriptor.size() != dim) {
            throw error(error_code::dimension_mismatch, "mixed descriptor sizes within a frame");
        }
        m.col(static_cast<Eigen::Index>(i)) = frame[i].descriptor;
    }
    return m;
}

// n x K squared distances up to the per-row constant |x|^2.
Eigen::MatrixXd center_scores(const Eigen::MatrixXd& x, const Eigen::MatrixXd& centers) {
    Eigen::MatrixXd s = -2.0 * x.transpose() * centers;
    s.rowwise() += centers.colwise().squaredNorm();
    return s;
}

double min_pairwise_distance(const Eigen::MatrixXd& centers) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index a = 0; a < centers.cols(); ++a) {
        for (Eigen::Index b = a + 1; b < centers.cols(); ++b) {
            best = std::min(best, (centers.col(a) - centers.col(b)).norm());
        }
    }
    return best;
}

Eigen::Matrix3d hartley(std::span<const Eigen::Vector2d> pts) {
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    for (const auto& p : pts) mean += p;
    mean /= static_cast<double>(pts.size());
    double spread = 0.0;
    for (const auto& p : pts) spread += (p - mean).norm();
    spread /= static_cast<double>(pts.size());
    const double s = spread > 0.0 ? std::sqrt(2.0) / spread : 1.0;
    Eigen::Matrix3d t;
    t << s, 0, -s * mean.x(), 0, s, -s * mean.y(), 0, 0, 1;
    return t;
}

} // namespace

void BuildParams::validate() const {
    auto bad = [](const std::string& what) { throw error(error_code::invalid_spec, what); };
    if (!(threshold >= -1.0 && threshold <= 1.0)) bad("threshold must lie in [-1, 1]");
    if (window <= exclusion) bad("window must exceed exclusion");
    if (clusters < 1) bad("clusters must be positive");
    if (min_inliers < 0) bad("min_inliers must be non-negative");
    if (!(ratio > 0.0 && ratio <= 1.0)) bad("ratio must lie in (0, 1]");
    if (ransac_iterations < 1) bad("ransac_iterations must be positive");
    if (!(sampson_px > 0.0)) bad("sampson_px must be positive");
    if (codebook_samples < static_cast<std::size_t>(clusters)) {
        bad("codebook_samples must be at least clusters");
    }
}

nlohmann::ordered_json BuildParams::to_json() const {
    return {{"threshold", threshold},
            {"window", window},
            {"exclusion", exclusion},
            {"clusters", clusters},
            {"min_inliers", min_inliers},
            {"ratio", ratio},
            {"ransac_iterations", ransac_iterations},
            {"sampson_px", sampson_px},
            {"codebook_samples", codebook_samples},
            {"seed", seed}};
}

BuildParams BuildParams::from_json(const nlohmann::json& j) {
    BuildParams p;
    p.threshold = j.value("threshold", p.threshold);
    p.window = j.value("window", p.window);
    p.exclusion = j.value("exclusion", p.exclusion);
    p.clusters = j.value("clusters", p.clusters);
    p.min_inliers = j.value("min_inliers", p.min_inliers);
    p.ratio = j.value("ratio", p.ratio);
    p.ransac_iterations = j.value("ransac_iterations", p.ransac_iterations);
    p.sampson_px = j.value("sampson_px", p.sampson_px);
    p.codebook_samples = j.value("codebook_samples", p.codebook_samples);
    p.seed = j.value("seed", p.seed);
    return p;
}

std::vector<LoopPair> LoopDatabase::pairs_for(const std::string& scene) const {
    std::vector<LoopPair> out;
    std::copy_if(pairs.begin(), pairs.end(), std::back_inserter(out),
                 [&](const LoopPair& p) { return p.scene == scene; });
    return out;
}

int Codebook::nearest(const Eigen::VectorXd& descriptor) const {
    if (descriptor.size() != centers.rows()) {
        throw error(error_code::dimension_mismatch,
                    "descriptor has " + std::to_string(descriptor.size()) +
                        " components, codebook expects " + std::to_string(centers.rows()));
    }
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int k = 0; k < size(); ++k) {
        const double d = (centers.col(k) - descriptor).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    return best;
}

Codebook build_codebook(std::span<const Eigen::VectorXd> descriptors, int clusters,
                        std::uint64_t seed) {
    if (clusters < 1) {
        throw error(error_code::invalid_spec, "clusters must be positive");
    }
    const auto n = static_cast<Eigen::Index>(descriptors.size());
    if (n < clusters) {
        throw error(error_code::too_few_features, std::to_string(n) + " descriptors for " +
                                                      std::to_string(clusters) + " clusters");
    }
    const auto dim = descriptors.front().size();
    Eigen::MatrixXd x(dim, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (descriptors[static_cast<std::size_t>(i)].size() != dim) {
            throw error(error_code::dimension_mismatch, "mixed descriptor sizes");
        }
        x.col(i) = descriptors[static_cast<std::size_t>(i)];
    }

    std::mt19937_64 rng(seed);
    Eigen::MatrixXd centers(dim, clusters);
    std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
    centers.col(0) = x.col(first(rng));
    Eigen::VectorXd d2 = (x.colwise() - centers.col(0)).colwise().squaredNorm().transpose();
    for (int c = 1; c < clusters; ++c) {
        const double total = d2.sum();
        if (!(total > 0.0)) {
            throw error(error_code::too_few_features,
                        "fewer than " + std::to_string(clusters) + " distinct descriptors");
        }
        std::uniform_real_distribution<double> u(0.0, total);
        const double r = u(rng);
        double acc = 0.0;
        Eigen::Index pick = n - 1;
        for (Eigen::Index i = 0; i < n; ++i) {
            acc += d2(i);
            if (acc > r && d2(i) > 0.0) {
                pick = i;
                break;
            }
        }
        centers.col(c) = x.col(pick);
        d2 = d2.cwiseMin((x.colwise() - centers.col(c)).colwise().squaredNorm().transpose());
    }

    std::vector<int> assign(static_cast<std::size_t>(n));
    for (int iter = 0; iter < 100; ++iter) {
        const Eigen::MatrixXd s = center_scores(x, centers);
        Eigen::VectorXd best(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            Eigen::Index k;
            best(i) = s.row(i).minCoeff(&k);
            assign[static_cast<std::size_t>(i)] = static_cast<int>(k);
        }
        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(dim, clusters);
        std::vector<int> counts(static_cast<std::size_t>(clusters), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.col(assign[static_cast<std::size_t>(i)]) += x.col(i);
            ++counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
        }
        Eigen::MatrixXd next = centers;
        for (int k = 0; k < clusters; ++k) {
            if (counts[static_cast<std::size_t>(k)] > 0) {
                next.col(k) = sums.col(k) / counts[static_cast<std::size_t>(k)];
                continue;
            }
            // Re-seed an empty cluster at the worst-served point.
            const Eigen::VectorXd err = best + x.colwise().squaredNorm().transpose();
            Eigen::Index far;
            err.maxCoeff(&far);
            next.col(k) = x.col(far);
            best(far) = -x.col(far).squaredNorm();
        }
        const double moved = (next - centers).colwise().norm().maxCoeff();
        centers = next;
        if (moved < 1e-6) {
            break;
        }
    }
    if (clusters > 1 && !(min_pairwise_distance(centers) > 1e-6)) {
        throw error(error_code::too_few_features, "codebook centers collapsed");
    }
    return {centers};
}

GlobalDescriptor vlad_descriptor(const Frame& frame, const Codebook& codebook) {
    if (frame.empty()) {
        throw error(error_code::empty_frame, "frame has no features");
    }
    const auto dim = codebook.centers.rows();
    Eigen::VectorXd v = Eigen::VectorXd::Zero(dim * codebook.size());
    for (const auto& f : frame) {
        const int k = codebook.nearest(f.descriptor);
        v.segment(k * dim, dim) += f.descriptor - codebook.centers.col(k);
    }
    for (int k = 0; k < codebook.size(); ++k) {
        auto block = v.segment(k * dim, dim);
        const double n = block.norm();
        if (n > 0.0) {
            block /= n;
        }
    }
    const double n = v.norm();
    if (!(n > 0.0)) {
        return {v, false};
    }
    return {v / n, true};
}

double similarity(const GlobalDescriptor& a, const GlobalDescriptor& b) {
    if (!a.valid || !b.valid) {
        return 0.0;
    }
    if (a.vector.size() != b.vector.size()) {
        throw error(error_code::dimension_mismatch, "global descriptors differ in size");
    }
    const double c = a.vector.dot(b.vector) / (a.vector.norm() * b.vector.norm());
    return std::clamp(c, -1.0, 1.0);
}

RetrievalIndex::RetrievalIndex(std::size_t window, std::size_t exclusion)
    : window_(window), exclusion_(exclusion) {
    if (window <= exclusion) {
        throw error(error_code::invalid_spec, "window must exceed exclusion");
    }
}

void RetrievalIndex::add(std::size_t frame, const GlobalDescriptor& descriptor) {
    if (!entries_.empty() && frame <= entries_.back().first) {
        throw error(error_code::invalid_spec, "frames must be added in increasing order");
    }
    if (descriptor.valid) {
        entries_.emplace_back(frame, descriptor);
    }
    // Anything older than frame + 1 - window can never be retrieved again.
    while (!entries_.empty() && entries_.front().first + window_ <= frame) {
        entries_.pop_front();
    }
}

std::vector<Candidate> RetrievalIndex::query(std::size_t query_frame,
                                             const GlobalDescriptor& descriptor,
                                             double threshold) const {
    std::vector<Candidate> out;
    if (!descriptor.valid) {
        return out;
    }
    for (const auto& [frame, desc] : entries_) {
        if (frame + window_ < query_frame || frame + exclusion_ >= query_frame) {
            continue;
        }
        const double s = similarity(desc, descriptor);
        if (s >= threshold) {
            out.push_back({frame, s});
        }
    }
    std::sort(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) {
        return a.similarity != b.similarity ? a.similarity > b.similarity : a.frame < b.frame;
    });
    return out;
}

std::vector<Candidate> retrieve_candidates(const RetrievalIndex& index, std::size_t query_frame,
                                           const GlobalDescriptor& descriptor,
                                           double threshold) {
    return index.query(query_frame, descriptor, threshold);
}

std::vector<std::pair<int, int>> match_features(const Frame& a, const Frame& b, double ratio) {
    std::vector<std::pair<int, int>> out;
    if (a.empty() || b.empty()) {
        return out;
    }
    const Eigen::MatrixXd da = stack_descriptors(a);
    const Eigen::MatrixXd db = stack_descriptors(b);
    if (da.rows() != db.rows()) {
        throw error(error_code::dimension_mismatch, "frames use different descriptor sizes");
    }
    Eigen::MatrixXd d = -2.0 * da.transpose() * db;
    d.colwise() += da.colwise().squaredNorm().transpose();
    d.rowwise() += db.colwise().squaredNorm();
    d = d.cwiseMax(0.0);

    std::vector<Eigen::Index> best_in_a(static_cast<std::size_t>(d.cols()));
    for (Eigen::Index j = 0; j < d.cols(); ++j) {
        d.col(j).minCoeff(&best_in_a[static_cast<std::size_t>(j)]);
    }
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
        Eigen::Index j1 = 0;
        double d1 = std::numeric_limits<double>::infinity();
        double d2 = std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < d.cols(); ++j) {
            const double v = d(i, j);
            if (v < d1) {
                d2 = d1;
                d1 = v;
                j1 = j;
            } else if (v < d2) {
                d2 = v;
            }
        }
        if (best_in_a[static_cast<std::size_t>(j1)] != i) {
            continue;
        }
        if (std::sqrt(d1) < ratio * std::sqrt(d2)) {
            out.emplace_back(static_cast<int>(i), static_cast<int>(j1));
        }
    }
    return out;
}

Eigen::Matrix3d estimate_fundamental(std::span<const Eigen::Vector2d> x1,
                                     std::span<const Eigen::Vector2d> x2) {
    if (x1.size() != x2.size() || x1.size() < 8) {
        throw error(error_code::too_few_features, "8-point estimate needs 8 correspondences");
    }
    const Eigen::Matrix3d t1 = hartley(x1);
    const Eigen::Matrix3d t2 = hartley(x2);
    Eigen::Matrix<double, 9, 9> ata = Eigen::Matrix<double, 9, 9>::Zero();
    for (std::size_t i = 0; i < x1.size(); ++i) {
        const Eigen::Vector3d p = t1 * x1[i].homogeneous();
        const Eigen::Vector3d q = t2 * x2[i].homogeneous();
        Eigen::Matrix<double, 9, 1> row;
        row << q.x() * p.x(), q.x() * p.y(), q.x(), q.y() * p.x(), q.y() * p.y(), q.y(), p.x(),
            p.y(), 1.0;
        ata.selfadjointView<Eigen::Lower>().rankUpdate(row);
    }
    // Null vector of A via the smallest eigenvector of A^T A.
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 9, 9>> eig(
        ata.selfadjointView<Eigen::Lower>());
    const Eigen::Matrix<double, 9, 1> f = eig.eigenvectors().col(0);
    Eigen::Matrix3d fn;
    fn << f(0), f(1), f(2), f(3), f(4), f(5), f(6), f(7), f(8);

    Eigen::JacobiSVD<Eigen::Matrix3d> rank(fn, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Vector3d s = rank.singularValues();
    s(2) = 0.0;
    fn = rank.matrixU() * s.asDiagonal() * rank.matrixV().transpose();

    Eigen::Matrix3d out = t2.transpose() * fn * t1;
    const double n = out.norm();
    return n > 0.0 ? Eigen::Matrix3d(out / n) : out;
}

double sampson_distance(const Eigen::Matrix3d& f, const Eigen::Vector2d& x1,
                        const Eigen::Vector2d& x2) {
    const Eigen::Vector3d p = x1.homogeneous();
    const Eigen::Vector3d q = x2.homogeneous();
    const Eigen::Vector3d fp = f * p;
    const Eigen::Vector3d ftq = f.transpose() * q;
    const double e = q.dot(fp);
    const double denom = fp.x() * fp.x() + fp.y() * fp.y() + ftq.x() * ftq.x() + ftq.y() * ftq.y();
    if (!(denom > 0.0)) {
        return e == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    }
    return std::abs(e) / std::sqrt(denom);
}

Verification geometric_verify(const Frame& a, const Frame& b, const VerifyParams& params) {
    Verification v;
    if (a.size() < 8 || b.size() < 8) {
        v.reason = "too few features";
        return v;
    }
    const auto matches = match_features(a, b, params.ratio);
    v.matches = static_cast<int>(matches.size());
    if (matches.size() < 8) {
        v.reason = "too few matches";
        return v;
    }
    std::vector<Eigen::Vector2d> p1, p2;
    for (const auto& [i, j] : matches) {
        p1.push_back(a[static_cast<std::size_t>(i)].position);
        p2.push_back(b[static_cast<std::size_t>(j)].position);
    }

    std::mt19937_64 rng(params.seed);
    std::vector<std::size_t> idx(matches.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::array<Eigen::Vector2d, 8> s1, s2;
    for (int it = 0; it < params.iterations && v.inliers < v.matches; ++it) {
        for (std::size_t k = 0; k < 8; ++k) {
            std::uniform_int_distribution<std::size_t> pick(k, idx.size() - 1);
            std::swap(idx[k], idx[pick(rng)]);
            s1[k] = p1[idx[k]];
            s2[k] = p2[idx[k]];
        }
        const Eigen::Matrix3d f = estimate_fundamental(s1, s2);
        int count = 0;
        for (std::size_t m = 0; m < p1.size(); ++m) {
            if (sampson_distance(f, p1[m], p2[m]) < params.sampson_px) {
                ++count;
            }
        }
        if (count > v.inliers) {
            v.inliers = count;
            v.fundamental = f;
        }
    }
    v.accepted = v.inliers >= params.min_inliers;
    if (!v.accepted) {
        v.reason = "inliers below threshold";
    }
    return v;
}

namespace {

struct SceneResult {
    SceneSummary summary;
    std::vector<LoopPair> pairs;
};

SceneResult process_scene(const SceneInput& scene, const Codebook& codebook,
                          const BuildParams& params) {
    SceneResult r;
    r.summary.scene = scene.id;
    r.summary.frames = scene.frames.size();
    RetrievalIndex index(params.window, params.exclusion);
    for (std::size_t q = 0; q < scene.frames.size(); ++q) {
        GlobalDescriptor desc;
        try {
            desc = vlad_descriptor(scene.frames[q], codebook);
        } catch (const error& e) {
            spdlog::debug("{} frame {}: {}", scene.id, q, e.what());
        }
        if (!desc.valid) {
            ++r.summary.skipped;
            continue;
        }
        for (const auto& c : index.query(q, desc, params.threshold)) {
            VerifyParams vp;
            vp.min_inliers = params.min_inliers;
            vp.ratio = params.ratio;
            vp.iterations = params.ransac_iterations;
            vp.sampson_px = params.sampson_px;
            std::seed_seq seq{params.seed, static_cast<std::uint64_t>(c.frame),
                              static_cast<std::uint64_t>(q)};
            std::array<std::uint64_t, 1> s{};
            seq.generate(s.begin(), s.end());
            vp.seed = s[0];
            const auto ver = geometric_verify(scene.frames[c.frame], scene.frames[q], vp);
            if (ver.accepted) {
                r.pairs.push_back({scene.id, c.frame, q, c.similarity, ver.inliers});
                break;
            }
        }
        index.add(q, desc);
    }
    r.summary.pairs = r.pairs.size();
    return r;
}

} // namespace

LoopDatabase build_database(std::span<const SceneInput> scenes, const BuildParams& params) {
    params.validate();
    LoopDatabase db;
    db.params = params;

    std::vector<const Eigen::VectorXd*> all;
    for (const auto& s : scenes) {
        for (const auto& f : s.frames) {
            for (const auto& feat : f) {
                all.push_back(&feat.descriptor);
            }
        }
    }
    if (all.empty()) {
        spdlog::warn("corpus has no features; database is empty");
        for (const auto& s : scenes) {
            db.scenes.push_back({s.id, s.frames.size(), s.frames.size(), 0});
        }
        return db;
    }
    std::vector<std::size_t> chosen(all.size());
    std::iota(chosen.begin(), chosen.end(), 0);
    if (chosen.size() > params.codebook_samples) {
        std::mt19937_64 rng(params.seed);
        for (std::size_t k = 0; k < params.codebook_samples; ++k) {
            std::uniform_int_distribution<std::size_t> pick(k, chosen.size() - 1);
            std::swap(chosen[k], chosen[pick(rng)]);
        }
        chosen.resize(params.codebook_samples);
        std::sort(chosen.begin(), chosen.end());
    }
    std::vector<Eigen::VectorXd> sample;
    sample.reserve(chosen.size());
    for (auto i : chosen) {
        sample.push_back(*all[i]);
    }
    const Codebook codebook = build_codebook(sample, params.clusters, params.seed);

    // Scenes are independent; results are merged in input order.
    std::vector<std::future<SceneResult>> jobs;
    for (const auto& s : scenes) {
        jobs.push_back(std::async(std::launch::async, process_scene, std::cref(s),
                                  std::cref(codebook), std::cref(params)));
    }
    for (auto& job : jobs) {
        auto r = job.get();
        spdlog::info("{}: {} pairs from {} frames ({} skipped)", r.summary.scene, r.summary.pairs,
                     r.summary.frames, r.summary.skipped);
        db.scenes.push_back(r.summary);
        db.pairs.insert(db.pairs.end(), r.pairs.begin(), r.pairs.end());
    }
    std::sort(db.pairs.begin(), db.pairs.end(),
              [](const LoopPair& a, const LoopPair& b) { return a.key() < b.key(); });
    db.pairs.erase(std::unique(db.pairs.begin(), db.pairs.end(),
                               [](const LoopPair& a, const LoopPair& b) { return a.key() == b.key(); }),
                   db.pairs.end());
    return db;
}

LoopDatabase build_database(std::span<const SyntheticScene> scenes, const BuildParams& params) {
    std::vector<SceneInput> inputs;
    inputs.reserve(scenes.size());
    for (const auto& s : scenes) {
        inputs.push_back({s.spec.id, s.frames});
    }
    return build_database(std::span<const SceneInput>(inputs), params);
}

double PairScore::precision() const {
    return found == 0 ? 1.0 : static_cast<double>(true_positives) / static_cast<double>(found);
}

double PairScore::recall() const {
    return expected == 0 ? 1.0
                         : static_cast<double>(true_positives) / static_cast<double>(expected);
}

PairScore score_pairs(const SyntheticScene& scene, std::span<const LoopPair> pairs,
                      std::size_t exclusion) {
    PairScore s;
    for (const auto& p : pairs) {
        if (p.scene != scene.spec.id) {
            continue;
        }
        ++s.found;
        if (p.frame_i < scene.place.size() && p.frame_j < scene.place.size() &&
            scene.place[p.frame_i] == scene.place[p.frame_j]) {
            ++s.true_positives;
        }
    }
    for (std::size_t j = 0; j < scene.place.size(); ++j) {
        for (std::size_t i = 0; i + exclusion < j; ++i) {
            if (scene.place[i] == scene.place[j]) {
                ++s.expected;
                break;
            }
        }
    }
    return s;
}

} // namespace autoloop::loopdb
