#include "autoloop/error.hpp"
#include "autoloop/loopdb.hpp"
#include "doctest.h"
#include "support.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <random>
#include <set>

using namespace autoloop;
using namespace autoloop::loopdb;
using autoloop::test::scratch_dir;
using autoloop::test::slurp;

namespace {

Eigen::VectorXd unit(std::mt19937_64& rng, int dim) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::VectorXd v(dim);
    for (int i = 0; i < dim; ++i) v(i) = n(rng);
    return v.normalized();
}

Frame random_frame(std::mt19937_64& rng, int count, int dim = 16) {
    std::uniform_real_distribution<double> u(0.0, 640.0);
    std::uniform_real_distribution<double> v(0.0, 480.0);
    Frame f;
    for (int i = 0; i < count; ++i) {
        const double x = u(rng);
        const double y = v(rng);
        f.push_back({{x, y}, unit(rng, dim)});
    }
    return f;
}

GlobalDescriptor basis_descriptor(int dim, int axis) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
    v(axis) = 1.0;
    return {v, true};
}

// Two pinhole views of shared points; returns frames with matching descriptors.
std::pair<Frame, Frame> two_views(std::mt19937_64& rng, int points, double pixel_noise,
                                  const liegroup::Pose& second) {
    const Camera cam;
    std::uniform_real_distribution<double> ux(-6.0, 6.0);
    std::uniform_real_distribution<double> uz(5.0, 15.0);
    std::normal_distribution<double> n(0.0, pixel_noise);
    Frame a, b;
    const liegroup::Pose w2c = liegroup::inverse(second);
    while (static_cast<int>(a.size()) < points) {
        const Vec3 p(ux(rng), 0.6 * ux(rng), uz(rng));
        Eigen::Vector2d pa, pb;
        if (!cam.project(p, pa) || !cam.project(w2c.transform(p), pb)) continue;
        const Eigen::VectorXd d = unit(rng, 16);
        const double n1 = n(rng), n2 = n(rng), n3 = n(rng), n4 = n(rng);
        a.push_back({pa + Eigen::Vector2d(n1, n2), d});
        b.push_back({pb + Eigen::Vector2d(n3, n4), d});
    }
    return {a, b};
}

} // namespace

TEST_CASE("codebook recovers well separated clusters") {
    std::mt19937_64 rng(1);
    const int k = 6;
    std::vector<Eigen::VectorXd> means;
    for (int c = 0; c < k; ++c) {
        Eigen::VectorXd m = Eigen::VectorXd::Zero(8);
        m(c) = 10.0;
        means.push_back(m);
    }
    std::normal_distribution<double> n(0.0, 0.1);
    std::vector<Eigen::VectorXd> data;
    for (int i = 0; i < 600; ++i) {
        Eigen::VectorXd x = means[static_cast<std::size_t>(i % k)];
        for (int d = 0; d < 8; ++d) x(d) += n(rng);
        data.push_back(x);
    }
    const Codebook cb = build_codebook(data, k, 7);
    REQUIRE(cb.size() == k);
    for (const auto& m : means) {
        double best = 1e9;
        for (int c = 0; c < k; ++c) best = std::min(best, (cb.centers.col(c) - m).norm());
        CHECK(best < 0.05);
    }

    const Codebook again = build_codebook(data, k, 7);
    CHECK(cb.centers == again.centers);

    const Codebook one = build_codebook(data, 1, 3);
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(8);
    for (const auto& x : data) mean += x;
    mean /= static_cast<double>(data.size());
    CHECK((one.centers.col(0) - mean).norm() < 1e-12);

    CHECK_THROWS_AS(build_codebook(std::span(data).first(3), 4, 0), autoloop::error);
    const std::vector<Eigen::VectorXd> same(10, means[0]);
    CHECK_THROWS_AS(build_codebook(same, 2, 0), autoloop::error);
}

TEST_CASE("vlad descriptor") {
    std::mt19937_64 rng(2);
    std::vector<Eigen::VectorXd> data;
    for (int i = 0; i < 400; ++i) data.push_back(unit(rng, 16));
    const Codebook cb = build_codebook(data, 8, 1);

    SUBCASE("unit norm and permutation invariant") {
        Frame f = random_frame(rng, 60);
        const auto a = vlad_descriptor(f, cb);
        CHECK(a.valid);
        CHECK(a.vector.size() == 8 * 16);
        CHECK(std::abs(a.vector.norm() - 1.0) < 1e-12);
        std::shuffle(f.begin(), f.end(), rng);
        const auto b = vlad_descriptor(f, cb);
        CHECK((a.vector - b.vector).norm() < 1e-12);
        CHECK(similarity(a, b) == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("single feature lands in its center's block") {
        const Frame f = random_frame(rng, 1);
        const int k = cb.nearest(f[0].descriptor);
        const Eigen::VectorXd r = (f[0].descriptor - cb.centers.col(k)).normalized();
        const auto g = vlad_descriptor(f, cb);
        Eigen::VectorXd expect = Eigen::VectorXd::Zero(8 * 16);
        expect.segment(k * 16, 16) = r;
        CHECK((g.vector - expect).norm() < 1e-12);
    }
    SUBCASE("features exactly at centers give an invalid descriptor") {
        Frame f;
        for (int k = 0; k < cb.size(); ++k) f.push_back({{0, 0}, cb.centers.col(k)});
        const auto g = vlad_descriptor(f, cb);
        CHECK_FALSE(g.valid);
        CHECK(g.vector.norm() == 0.0);
        CHECK(similarity(g, g) == 0.0);
    }
    SUBCASE("empty frame") {
        try {
            vlad_descriptor(Frame{}, cb);
            FAIL("expected EmptyFrame");
        } catch (const autoloop::error& e) {
            CHECK(e.code() == error_code::empty_frame);
        }
    }
    SUBCASE("similarity is symmetric") {
        const auto a = vlad_descriptor(random_frame(rng, 40), cb);
        const auto b = vlad_descriptor(random_frame(rng, 40), cb);
        CHECK(similarity(a, b) == similarity(b, a));
        CHECK(similarity(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("retrieval window bounds") {
    const std::size_t window = 50;
    const std::size_t exclusion = 10;
    RetrievalIndex index(window, exclusion);
    const auto d = basis_descriptor(4, 0);
    const std::size_t q = 200;
    for (std::size_t f = 100; f < q; ++f) index.add(f, d);

    const auto hits = retrieve_candidates(index, q, d, 0.75);
    std::set<std::size_t> frames;
    for (const auto& c : hits) {
        frames.insert(c.frame);
        CHECK(c.similarity == doctest::Approx(1.0));
    }
    CHECK(frames.count(q - window) == 1);
    CHECK(frames.count(q - window - 1) == 0);
    CHECK(frames.count(q - exclusion) == 0);
    CHECK(frames.count(q - exclusion - 1) == 1);
    CHECK(frames.size() == window - exclusion);
    // Equal similarity: smaller index first.
    CHECK(std::is_sorted(hits.begin(), hits.end(),
                         [](const Candidate& a, const Candidate& b) { return a.frame < b.frame; }));
}

TEST_CASE("retrieval applies the threshold and sorts by similarity") {
    RetrievalIndex index(2000, 2);
    const Eigen::Vector4d q(1, 0, 0, 0);
    const std::vector<Eigen::Vector4d> past = {
        {0.8, 0.6, 0, 0}, {1, 0, 0, 0}, {0.6, 0.8, 0, 0}, {0.9, std::sqrt(1 - 0.81), 0, 0}};
    for (std::size_t f = 0; f < past.size(); ++f) index.add(f, {past[f], true});
    index.add(4, {q, false});
    const auto hits = index.query(10, {q, true}, 0.75);
    REQUIRE(hits.size() == 3);
    CHECK(hits[0].frame == 1);
    CHECK(hits[0].similarity == 1.0);
    CHECK(hits[1].frame == 3);
    CHECK(hits[2].frame == 0);
    CHECK(index.query(10, {q, false}, 0.75).empty());
}

TEST_CASE("eight point estimate satisfies the epipolar constraint") {
    std::mt19937_64 rng(3);
    const liegroup::Pose second{liegroup::exp_so3(Vec3(0.02, 0.1, -0.03)), Vec3(1.0, 0.1, 0.2)};
    const auto [a, b] = two_views(rng, 40, 0.0, second);
    std::vector<Eigen::Vector2d> x1, x2;
    for (std::size_t i = 0; i < a.size(); ++i) {
        x1.push_back(a[i].position);
        x2.push_back(b[i].position);
    }
    const Eigen::Matrix3d f = estimate_fundamental(x1, x2);
    CHECK(f.jacobiSvd().singularValues()(2) < 1e-9);
    for (std::size_t i = 0; i < x1.size(); ++i) {
        CHECK(sampson_distance(f, x1[i], x2[i]) < 1e-6);
    }

    // Oracle: F = K^-T [t]x R K^-1 for x2 in the second camera, x1 in the first.
    Eigen::Matrix3d k;
    k << 300, 0, 320, 0, 300, 240, 0, 0, 1;
    const liegroup::Pose rel = liegroup::inverse(second);  // first-camera point -> second camera
    const Eigen::Matrix3d e = liegroup::hat(rel.translation) * rel.rotation.matrix();
    Eigen::Matrix3d oracle = k.inverse().transpose() * e * k.inverse();
    oracle /= oracle.norm();
    const double sign = (oracle.array() * f.array()).sum() > 0 ? 1.0 : -1.0;
    CHECK((sign * f - oracle).norm() < 1e-6);

    CHECK(sampson_distance(3.0 * f, x1[0], x2[0] + Eigen::Vector2d(2, 1)) ==
          doctest::Approx(sampson_distance(f, x1[0], x2[0] + Eigen::Vector2d(2, 1))));
}

TEST_CASE("geometric verification") {
    VerifyParams vp;
    SUBCASE("a frame against itself") {
        std::mt19937_64 rng(4);
        const Frame f = random_frame(rng, 80);
        const auto v = geometric_verify(f, f, vp);
        CHECK(v.accepted);
        CHECK(v.matches == 80);
        CHECK(v.inliers == v.matches);
    }
    SUBCASE("unrelated frames are rejected") {
        int rejected = 0;
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            std::mt19937_64 rng(seed);
            const Frame a = random_frame(rng, 150);
            const Frame b = random_frame(rng, 150);
            vp.seed = seed;
            if (!geometric_verify(a, b, vp).accepted) ++rejected;
        }
        CHECK(rejected >= 99);
    }
    SUBCASE("100 shared landmarks with half-pixel noise") {
        std::mt19937_64 rng(5);
        const liegroup::Pose second{liegroup::exp_so3(Vec3(0, 0.15, 0)), Vec3(0.8, 0, 0.3)};
        auto [a, b] = two_views(rng, 100, 0.5, second);
        const Frame clutter_a = random_frame(rng, 30);
        const Frame clutter_b = random_frame(rng, 30);
        a.insert(a.end(), clutter_a.begin(), clutter_a.end());
        b.insert(b.end(), clutter_b.begin(), clutter_b.end());
        const auto v = geometric_verify(a, b, vp);
        CHECK(v.accepted);
        CHECK(v.inliers >= 90);
    }
    SUBCASE("too few features") {
        std::mt19937_64 rng(6);
        const auto v = geometric_verify(random_frame(rng, 7), random_frame(rng, 50), vp);
        CHECK_FALSE(v.accepted);
        CHECK(v.reason == "too few features");
    }
    SUBCASE("acceptance is monotone in min_inliers") {
        std::mt19937_64 rng(7);
        const liegroup::Pose second{liegroup::exp_so3(Vec3(0, 0.1, 0)), Vec3(0.5, 0, 0)};
        auto [a, b] = two_views(rng, 45, 2.0, second);
        bool was_rejected = false;
        for (int m = 0; m <= 60; m += 5) {
            vp.min_inliers = m;
            const bool ok = geometric_verify(a, b, vp).accepted;
            CHECK_FALSE((was_rejected && ok));
            was_rejected = was_rejected || !ok;
        }
        CHECK(was_rejected);
    }
}

TEST_CASE("scene generation") {
    SceneSpec spec;
    spec.frames = 220;
    spec.revisits = {{10, 200}};
    spec.seed = 11;
    const auto scene = generate_scene(spec);
    CHECK(scene.frames.size() == 220);
    CHECK(scene.ground_truth.size() == 220);
    CHECK(liegroup::twist_norm(liegroup::log_se3(
              liegroup::between(scene.ground_truth.poses[10], scene.ground_truth.poses[200]))) < 1e-6);
    CHECK(scene.revisits == std::vector<std::pair<std::size_t, std::size_t>>{{10, 200}});
    for (const auto& f : scene.frames) {
        CHECK(f.size() > 30);
        for (const auto& feat : f) CHECK(std::abs(feat.descriptor.norm() - 1.0) < 1e-6);
    }
    for (std::size_t k = 0; k + 1 < scene.visible.size(); ++k) {
        CHECK(std::is_sorted(scene.visible[k].begin(), scene.visible[k].end()));
    }

    const auto again = generate_scene(spec);
    CHECK(again.ground_truth.poses[57].translation == scene.ground_truth.poses[57].translation);
    CHECK(again.frames[57][3].descriptor == scene.frames[57][3].descriptor);
    CHECK(again.landmarks == scene.landmarks);

    SUBCASE("circle laps coincide") {
        SceneSpec c;
        c.shape = Shape::circle;
        c.frames = 60;
        c.lap_frames = 20;
        c.landmarks = 400;
        const auto s = generate_scene(c);
        CHECK(s.revisits.size() == 60);  // 20 places seen three times
        for (const auto& [i, j] : s.revisits) {
            CHECK(liegroup::between(s.ground_truth.poses[i], s.ground_truth.poses[j])
                      .translation.norm() == 0.0);
        }
    }
    SUBCASE("noise free revisits are retrieved with similarity one") {
        SceneSpec c = spec;
        c.descriptor_noise = 0.0;
        c.pixel_noise = 0.0;
        const auto s = generate_scene(c);
        std::vector<Eigen::VectorXd> all;
        for (const auto& f : s.frames)
            for (const auto& x : f) all.push_back(x.descriptor);
        const Codebook cb = build_codebook(all, 32, 0);
        CHECK(similarity(vlad_descriptor(s.frames[10], cb), vlad_descriptor(s.frames[200], cb)) ==
              doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("invalid specs") {
        for (auto mutate : std::vector<void (*)(SceneSpec&)>{
                 [](SceneSpec& s) { s.landmarks = 0; },
                 [](SceneSpec& s) { s.frames = 1; },
                 [](SceneSpec& s) { s.revisits = {{20, 10}}; },
                 [](SceneSpec& s) { s.revisits = {{1, 400}}; },
                 [](SceneSpec& s) { s.revisits = {{1, 50}, {2, 50}}; },
                 [](SceneSpec& s) { s.revisits = {{1, 50}, {50, 90}}; },
                 [](SceneSpec& s) { s.id = "a/b"; },
                 [](SceneSpec& s) { s.descriptor_noise = -1.0; }}) {
            SceneSpec bad = spec;
            mutate(bad);
            CHECK_THROWS_AS(generate_scene(bad), autoloop::error);
        }
        CHECK_THROWS_AS(SceneSpec::from_json({{"frames", 10}, {"colour", "red"}}), autoloop::error);
        CHECK_THROWS_AS(SceneSpec::from_json({{"frames", "ten"}}), autoloop::error);
    }
    SUBCASE("spec json round trip") {
        const auto j = spec.to_json();
        CHECK(SceneSpec::from_json(j).to_json() == j);
    }
}

TEST_CASE("database on planted revisits") {
    std::vector<SyntheticScene> scenes;
    SceneSpec a;
    a.id = "planted";
    a.revisits = {{15, 160}, {60, 210}, {120, 290}};
    a.seed = 21;
    scenes.push_back(generate_scene(a));
    SceneSpec b;
    b.id = "plain";
    b.seed = 22;
    scenes.push_back(generate_scene(b));

    const BuildParams params;
    const auto db = build_database(std::span<const SyntheticScene>(scenes), params);
    const auto pairs = db.pairs_for("planted");
    REQUIRE(pairs.size() == 3);
    CHECK(pairs[0].frame_i == 15);
    CHECK(pairs[0].frame_j == 160);
    CHECK(pairs[1].frame_i == 60);
    CHECK(pairs[2].frame_j == 290);
    for (const auto& p : pairs) {
        CHECK(p.similarity >= params.threshold);
        CHECK(p.inliers >= params.min_inliers);
        CHECK(p.frame_j - p.frame_i > params.exclusion);
    }
    CHECK(db.pairs_for("plain").empty());
    const auto score = score_pairs(scenes[0], pairs, params.exclusion);
    CHECK(score.precision() == 1.0);
    CHECK(score.recall() == 1.0);
    REQUIRE(db.scenes.size() == 2);
    CHECK(db.scenes[1].pairs == 0);

    const auto dir = scratch_dir("loopdb");
    write_database(dir / "a.jsonl", db);
    const auto second = build_database(std::span<const SyntheticScene>(scenes), params);
    write_database(dir / "b.jsonl", second);
    CHECK(slurp(dir / "a.jsonl") == slurp(dir / "b.jsonl"));

    const auto loaded = read_database(dir / "a.jsonl");
    CHECK(loaded.pairs.size() == db.pairs.size());
    write_database(dir / "c.jsonl", loaded);
    CHECK(slurp(dir / "a.jsonl") == slurp(dir / "c.jsonl"));

    write_histogram(dir / "hist.csv", db);
    CHECK(slurp(dir / "hist.csv") == "scene,frames,skipped,pairs\nplanted,300,0,3\nplain,300,0,0\n");
}

TEST_CASE("empty corpus gives an empty database") {
    const std::vector<SceneInput> none;
    const auto db = build_database(std::span<const SceneInput>(none), BuildParams{});
    CHECK(db.pairs.empty());
    const std::vector<SceneInput> blank = {{"blank", std::vector<Frame>(5)}};
    const auto db2 = build_database(std::span<const SceneInput>(blank), BuildParams{});
    CHECK(db2.pairs.empty());
    CHECK(db2.scenes.at(0).skipped == 5);
}

TEST_CASE("feature interchange files") {
    std::mt19937_64 rng(9);
    std::vector<Frame> frames = {random_frame(rng, 5, 4), Frame{}, random_frame(rng, 3, 4)};
    const auto dir = scratch_dir("features");
    write_features(dir / "f.txt", frames, 4);
    const auto ff = read_features(dir / "f.txt");
    CHECK(ff.dim == 4);
    REQUIRE(ff.frames.size() == 3);
    CHECK(ff.frames[1].empty());
    CHECK((ff.frames[2][1].position - frames[2][1].position).norm() < 1e-6);
    CHECK((ff.frames[2][1].descriptor - frames[2][1].descriptor).norm() < 1e-8);
    write_features(dir / "g.txt", ff.frames, 4);
    CHECK(slurp(dir / "f.txt") == slurp(dir / "g.txt"));

    const auto expect_malformed = [&](const std::string& text, const std::string& where) {
        std::ofstream(dir / "bad.txt") << text;
        try {
            read_features(dir / "bad.txt");
            FAIL("expected MalformedLine");
        } catch (const autoloop::error& e) {
            CHECK(e.code() == error_code::malformed_line);
            CHECK(std::string(e.what()).find(where) != std::string::npos);
        }
    };
    expect_malformed("frame 0 1\n", "line 1");
    expect_malformed("D 2\nframe 0 1\n1 2 3\n", "line 3");
    expect_malformed("D 2\nframe 0 2\n1 2 0.6 0.8\n", "short");
    expect_malformed("D 2\nframe 1 0\n", "line 2");
    expect_malformed("D 2\nframe 0 1\n1 2 0 0\n", "zero descriptor");
    CHECK_THROWS_AS(read_features(dir / "missing.txt"), autoloop::error);
}
