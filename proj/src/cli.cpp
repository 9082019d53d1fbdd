#include "autoloop/cli.hpp"

#include "autoloop/error.hpp"
#include "autoloop/eval.hpp"
#include "autoloop/loopdb.hpp"
#include "autoloop/trainer.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <openssl/evp.h>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <set>

#ifndef AUTOLOOP_VERSION
#define AUTOLOOP_VERSION "0.0.0"
#endif

namespace autoloop::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

void configure_logging() {
    auto logger = std::make_shared<spdlog::logger>(
        "autoloop", std::make_shared<spdlog::sinks::stderr_sink_mt>());
    logger->set_pattern("[%l] %v");
    spdlog::level::level_enum level = spdlog::level::info;
    if (const char* env = std::getenv("AUTOLOOP_LOG")) {
        const std::string name(env);
        if (name == "debug") {
            level = spdlog::level::debug;
        } else if (name == "info") {
            level = spdlog::level::info;
        } else if (name == "warn" || name == "warning") {
            level = spdlog::level::warn;
        } else if (name == "error") {
            level = spdlog::level::err;
        } else {
            logger->warn("ignoring AUTOLOOP_LOG='{}' (expected debug or info)", name);
        }
    }
    logger->set_level(level);
    spdlog::set_default_logger(logger);
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw error(error_code::io_error, "cannot read " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw error(error_code::invalid_spec, path.string() + ": " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw error(error_code::io_error, "cannot write " + path.string());
    out << text;
}

void prepare_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) {
        throw error(error_code::io_error, "cannot create output directory " + dir.string());
    }
}

void require_keys(const json& j, const std::set<std::string>& known, const std::string& where) {
    if (!j.is_object()) throw error(error_code::invalid_spec, where + " must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) {
            throw error(error_code::invalid_spec, where + ": unknown field '" + key + "'");
        }
    }
}

/// Sections of the shared --config file.
struct ConfigFile {
    json database = json::object();
    json trainer = json::object();
    json drift = json::object();
};

ConfigFile load_config(const std::optional<fs::path>& path) {
    ConfigFile c;
    if (!path) return c;
    const json j = read_json_file(*path);
    require_keys(j, {"database", "trainer", "drift"}, path->string());
    if (j.contains("database")) c.database = j.at("database");
    if (j.contains("trainer")) c.trainer = j.at("trainer");
    if (j.contains("drift")) c.drift = j.at("drift");
    return c;
}

loopdb::BuildParams build_params_from(const json& j) {
    std::set<std::string> known;
    const auto defaults = loopdb::BuildParams{}.to_json();
    for (const auto& [key, value] : defaults.items()) known.insert(key);
    require_keys(j, known, "database config");
    try {
        return loopdb::BuildParams::from_json(j);
    } catch (const json::exception& e) {
        throw error(error_code::invalid_spec, std::string("database config: ") + e.what());
    }
}

int exit_for(error_code code) {
    switch (code) {
        case error_code::non_finite_loss:
        case error_code::uninitialized_ema:
        case error_code::angle_near_pi:
            return internal_error;
        default:
            return user_error;
    }
}

std::vector<fs::path> files_with_suffix(const fs::path& dir, const std::string& suffix) {
    if (!fs::is_directory(dir)) {
        throw error(error_code::io_error, dir.string() + " is not a directory");
    }
    std::vector<fs::path> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (entry.is_regular_file() && name.size() > suffix.size() &&
            name.ends_with(suffix)) {
            out.push_back(entry.path());
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::string strip_suffix(const fs::path& p, const std::string& suffix) {
    const std::string name = p.filename().string();
    return name.substr(0, name.size() - suffix.size());
}

ojson scene_document(const loopdb::SyntheticScene& s) {
    ojson revisits = ojson::array();
    for (const auto& [i, j] : s.revisits) revisits.push_back({i, j});
    return {{"format", "autoloop-scene"},
            {"version", 1},
            {"spec", s.spec.to_json()},
            {"revisits", revisits}};
}

loopdb::SceneSpec read_scene_spec(const fs::path& path) {
    const json j = read_json_file(path);
    if (!j.is_object() || j.value("format", "") != "autoloop-scene") {
        throw error(error_code::invalid_spec, path.string() + " is not a scene file");
    }
    return loopdb::SceneSpec::from_json(j.at("spec"));
}

// gen-scenes

struct GenOptions {
    std::optional<fs::path> spec;
    std::string preset;
    fs::path out;
    std::optional<std::uint64_t> seed;
};

std::vector<loopdb::SceneSpec> scenes_from_spec_file(const fs::path& path,
                                                     std::optional<std::uint64_t> seed_override) {
    const json j = read_json_file(path);
    require_keys(j, {"seed", "scenes"}, path.string());
    if (!j.contains("scenes") || !j.at("scenes").is_array()) {
        throw error(error_code::invalid_spec, path.string() + ": 'scenes' must be an array");
    }
    std::uint64_t base = 0;
    if (j.contains("seed")) {
        if (!j.at("seed").is_number_unsigned()) {
            throw error(error_code::invalid_spec, path.string() + ": 'seed' must be unsigned");
        }
        base = j.at("seed").get<std::uint64_t>();
    }
    if (seed_override) base = *seed_override;
    std::vector<loopdb::SceneSpec> out;
    std::set<std::string> ids;
    const auto& list = j.at("scenes");
    for (std::size_t k = 0; k < list.size(); ++k) {
        const std::string where = fmt::format("{}: scenes[{}]", path.string(), k);
        try {
            loopdb::SceneSpec s = loopdb::SceneSpec::from_json(list.at(k));
            if (!list.at(k).contains("id")) s.id = fmt::format("scene{:02}", k);
            if (!list.at(k).contains("seed") || seed_override) {
                std::seed_seq seq{static_cast<std::uint32_t>(base),
                                  static_cast<std::uint32_t>(base >> 32),
                                  static_cast<std::uint32_t>(k)};
                std::uint32_t w[2];
                seq.generate(w, w + 2);
                s.seed = (static_cast<std::uint64_t>(w[0]) << 32) | w[1];
            }
            s.validate();
            if (!ids.insert(s.id).second) {
                throw error(error_code::invalid_spec, "duplicate scene id '" + s.id + "'");
            }
            out.push_back(s);
        } catch (const error& e) {
            throw error(e.code(), where + ": " + e.detail());
        }
    }
    return out;
}

int cmd_gen_scenes(const GenOptions& o) {
    std::vector<loopdb::SceneSpec> specs;
    if (o.spec) {
        specs = scenes_from_spec_file(*o.spec, o.seed);
    } else if (o.preset == "corpus") {
        specs = loopdb::standard_corpus_specs();
    } else if (o.preset == "drift") {
        specs = {trainer::standard_drift_spec()};
    } else {
        throw error(error_code::invalid_spec, "give --spec <file> or --preset corpus|drift");
    }
    if (!o.spec && o.seed) {
        for (std::size_t k = 0; k < specs.size(); ++k) specs[k].seed = *o.seed + k;
    }

    RunManifest m;
    m.command = "gen-scenes";
    ojson list = ojson::array();
    for (const auto& s : specs) {
        list.push_back(s.to_json());
        m.outputs.push_back(s.id + ".scene.json");
        m.outputs.push_back(s.id + ".features");
        m.outputs.push_back(s.id + ".gt.tum");
    }
    m.config = {{"preset", o.spec ? "" : o.preset}, {"scenes", list}};
    m.seeds = ojson::object();
    for (const auto& s : specs) m.seeds[s.id] = s.seed;
    if (o.spec) m.inputs.push_back(*o.spec);
    prepare_dir(o.out);
    m.write(o.out);

    for (const auto& spec : specs) {
        const auto scene = loopdb::generate_scene(spec);
        write_text(o.out / (spec.id + ".scene.json"), scene_document(scene).dump(2) + "\n");
        loopdb::write_features(o.out / (spec.id + ".features"), scene.frames, spec.descriptor_dim);
        write_tum(o.out / (spec.id + ".gt.tum"), scene.ground_truth);
        std::cout << fmt::format("{}: {} frames, {} revisit pairs\n", spec.id, spec.frames,
                                 scene.revisits.size());
    }
    return ok;
}

// build-db

struct DbOptions {
    fs::path scenes;
    fs::path out;
    std::optional<fs::path> config;
    std::optional<std::uint64_t> seed;
    std::optional<double> threshold;
    std::optional<int> min_inliers;
    std::optional<std::size_t> window;
    std::optional<std::size_t> exclusion;
    std::optional<int> clusters;
};

int cmd_build_db(const DbOptions& o) {
    const ConfigFile cfg = load_config(o.config);
    loopdb::BuildParams p = build_params_from(cfg.database);
    if (o.seed) p.seed = *o.seed;
    if (o.threshold) p.threshold = *o.threshold;
    if (o.min_inliers) p.min_inliers = *o.min_inliers;
    if (o.window) p.window = *o.window;
    if (o.exclusion) p.exclusion = *o.exclusion;
    if (o.clusters) p.clusters = *o.clusters;
    p.validate();

    const auto feature_files = files_with_suffix(o.scenes, ".features");
    RunManifest m;
    m.command = "build-db";
    m.config = {{"database", p.to_json()}};
    m.seeds = {{"database", p.seed}};
    m.inputs = feature_files;
    m.outputs = {"loopdb.jsonl", "pairs_per_scene.csv", "quality.csv"};
    prepare_dir(o.out);
    m.write(o.out);

    std::vector<loopdb::SceneInput> inputs;
    for (const auto& path : feature_files) {
        auto file = loopdb::read_features(path);
        inputs.push_back({strip_suffix(path, ".features"), std::move(file.frames)});
    }
    const auto db = loopdb::build_database(inputs, p);
    loopdb::write_database(o.out / "loopdb.jsonl", db);
    loopdb::write_histogram(o.out / "pairs_per_scene.csv", db);

    // Scenes generated by gen-scenes carry their ground truth; score against it when present.
    std::string quality = "scene,found,true_positives,expected,precision,recall\n";
    std::size_t tp = 0, found = 0, expected = 0;
    for (const auto& in : inputs) {
        const fs::path scene_file = o.scenes / (in.id + ".scene.json");
        if (!fs::exists(scene_file)) continue;
        const auto scene = loopdb::generate_scene(read_scene_spec(scene_file));
        const auto pairs = db.pairs_for(in.id);
        const auto s = loopdb::score_pairs(scene, pairs, p.exclusion);
        quality += fmt::format("{},{},{},{},{},{}\n", in.id, s.found, s.true_positives,
                               s.expected, s.precision(), s.recall());
        tp += s.true_positives;
        found += s.found;
        expected += s.expected;
    }
    write_text(o.out / "quality.csv", quality);

    std::cout << fmt::format("{} scenes, {} loop pairs\n", db.scenes.size(), db.pairs.size());
    if (expected > 0) {
        const double precision = found ? static_cast<double>(tp) / static_cast<double>(found) : 1.0;
        std::cout << fmt::format("precision {:.4f} recall {:.4f}\n", precision,
                                 static_cast<double>(tp) / static_cast<double>(expected));
    }
    return ok;
}

// train

struct TrainOptions {
    fs::path scene;
    fs::path db;
    fs::path out;
    std::optional<fs::path> config;
    std::optional<std::uint64_t> seed;
    std::optional<std::int64_t> steps;
    std::optional<std::int64_t> cadence;
    std::optional<std::string> agent;
    std::optional<double> w_loop;
};

int cmd_train(const TrainOptions& o) {
    const ConfigFile cfg = load_config(o.config);
    trainer::TrainerConfig tc = trainer::TrainerConfig::from_json(cfg.trainer);
    trainer::DriftParams drift = trainer::standard_drift();
    if (!cfg.drift.empty()) {
        json d = trainer::standard_drift().to_json();
        d.update(cfg.drift);
        drift = trainer::DriftParams::from_json(d);
    }
    if (o.seed) tc.seed = *o.seed;
    if (o.steps) tc.steps = *o.steps;
    if (o.cadence) tc.cadence = *o.cadence;
    if (o.agent) tc.agent_enabled = *o.agent == "on";
    if (o.w_loop) {
        tc.weights.loop_weight = *o.w_loop;
        if (tc.agent_enabled) spdlog::warn("--w-loop only applies with --agent off");
    }
    tc.validate();

    RunManifest m;
    m.command = "train";
    m.config = {{"trainer", tc.to_json()}, {"drift", drift.to_json()}};
    m.seeds = {{"trainer", tc.seed}, {"drift", drift.seed}};
    m.inputs = {o.scene, o.db};
    m.outputs = {"config.json",  "trainlog.csv", "agent_updates.csv", "held_out.csv",
                 "agent.json",   "base.tum",     "trajectory.tum",    "ate.json"};
    prepare_dir(o.out);
    m.write(o.out);
    write_text(o.out / "config.json", m.config.dump(2) + "\n");

    const auto spec = read_scene_spec(o.scene);
    const auto db = loopdb::read_database(o.db);
    const auto pairs = db.pairs_for(spec.id);
    if (pairs.empty()) {
        throw error(error_code::no_pairs_in_scene,
                    fmt::format("the database has no loop pairs for scene '{}'; rebuild it with "
                                "build-db over a directory containing this scene, or lower "
                                "--threshold / --min-inliers",
                                spec.id));
    }
    const auto scene = loopdb::generate_scene(spec);
    const auto training = trainer::make_training_scene(scene, drift);

    Trajectory base;
    base.timestamps = training.ground_truth.timestamps;
    base.poses = training.base;
    write_tum(o.out / "base.tum", base);

    spdlog::info("training on '{}' with {} loop pairs for {} steps (agent {})", spec.id,
                 pairs.size(), tc.steps, tc.agent_enabled ? "on" : "off");
    const auto result = trainer::finetune(training, pairs, tc);
    result.log.write_csv(o.out / "trainlog.csv");
    result.log.write_updates_csv(o.out / "agent_updates.csv");
    result.log.write_held_out_csv(o.out / "held_out.csv");
    result.agent.save(o.out / "agent.json");
    const auto traj = trainer::model_trajectory(result.model, training);
    write_tum(o.out / "trajectory.tum", traj);
    const auto report = eval::ate(traj, training.ground_truth, eval::AlignMode::similarity);
    report.write_json(o.out / "ate.json");

    const auto before = eval::ate(base, training.ground_truth, eval::AlignMode::similarity);
    std::cout << fmt::format("ATE {:.6f} m (odometry {:.6f} m), {} steps\n", report.rmse,
                             before.rmse, result.log.rows.size());
    return ok;
}

// eval

struct EvalOptions {
    std::optional<fs::path> est;
    fs::path gt;
    std::optional<fs::path> runs;
    fs::path out;
    std::string align = "sim";
    double tolerance = 0.02;
};

int cmd_eval(const EvalOptions& o) {
    const auto mode = eval::align_mode_from_string(o.align);
    if (o.est.has_value() == o.runs.has_value()) {
        throw error(error_code::invalid_spec, "give exactly one of --est and --runs");
    }
    RunManifest m;
    m.command = "eval";
    m.config = {{"align", eval::to_string(mode)}, {"tolerance", o.tolerance}};
    m.seeds = ojson::object();

    if (o.est) {
        m.inputs = {*o.est, o.gt};
        m.outputs = {"ate.json", "ate_errors.csv"};
        prepare_dir(o.out);
        m.write(o.out);
        const auto report = eval::ate_files(*o.est, o.gt, mode, o.tolerance);
        report.write_json(o.out / "ate.json");
        report.write_errors_csv(o.out / "ate_errors.csv");
        std::cout << fmt::format("ATE {:.6f} m over {} frames ({})\n", report.rmse,
                                 report.errors.size(), eval::to_string(mode));
        return ok;
    }

    if (!fs::is_directory(*o.runs)) {
        throw error(error_code::io_error, o.runs->string() + " is not a directory");
    }
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(*o.runs)) {
        if (entry.is_directory()) dirs.push_back(entry.path());
    }
    std::sort(dirs.begin(), dirs.end());
    m.inputs.push_back(o.gt);
    for (const auto& d : dirs) {
        if (fs::exists(d / "trajectory.tum")) m.inputs.push_back(d / "trajectory.tum");
    }
    m.outputs = {"ate_runs.json"};
    prepare_dir(o.out);
    m.write(o.out);

    const Trajectory gt = read_tum(o.gt);
    eval::ExperimentResult result;
    for (std::size_t k = 0; k < dirs.size(); ++k) {
        eval::RunOutcome run;
        run.seed = k;
        try {
            const fs::path manifest = dirs[k] / "manifest.json";
            if (!fs::exists(manifest)) {
                throw error(error_code::invalid_spec, "run directory has no manifest.json");
            }
            const json mj = read_json_file(manifest);
            if (mj.contains("seeds") && mj["seeds"].contains("trainer")) {
                run.seed = mj["seeds"]["trainer"].get<std::uint64_t>();
            }
            const auto [e, g] = eval::associate(read_tum(dirs[k] / "trajectory.tum"), gt,
                                                o.tolerance);
            run.report = eval::ate(e, g, mode);
            run.ok = true;
        } catch (const std::exception& e) {
            run.error = e.what();
            spdlog::warn("{}: {}", dirs[k].filename().string(), e.what());
        }
        result.runs.push_back(std::move(run));
    }
    result.median = eval::select_median(result.runs);
    write_text(o.out / "ate_runs.json", result.to_json().dump(2) + "\n");
    std::cout << fmt::format("median ATE {:.6f} m over {} of {} runs (seed {})\n",
                             result.headline().rmse, result.median.completed, result.runs.size(),
                             result.runs[result.median.index].seed);
    return ok;
}

// cost

struct CostOptions {
    double frames = 2000;
    double scenes = 1;
    std::optional<fs::path> out;
};

int cmd_cost(const CostOptions& o) {
    if (!(o.scenes >= 0.0)) throw error(error_code::invalid_spec, "scene count must be >= 0");
    const double per_scene = eval::precompute_cost(o.frames);
    const ojson summary = {{"frames", o.frames},
                           {"scenes", o.scenes},
                           {"flops_per_frame", eval::precompute_cost(1.0)},
                           {"flops_per_scene", per_scene},
                           {"total_flops", o.scenes * per_scene}};
    if (o.out) {
        RunManifest m;
        m.command = "cost";
        m.config = {{"frames", o.frames}, {"scenes", o.scenes}};
        m.seeds = ojson::object();
        m.outputs = {"cost.json"};
        prepare_dir(*o.out);
        m.write(*o.out);
        write_text(*o.out / "cost.json", summary.dump(2) + "\n");
    }
    std::cout << fmt::format("{:.6g} FLOPs ({} scenes x {} frames)\n", o.scenes * per_scene,
                             o.scenes, o.frames);
    return ok;
}

} // namespace

ojson RunManifest::to_json() const {
    ojson in = ojson::array();
    for (const auto& p : inputs) {
        in.push_back({{"path", p.generic_string()}, {"sha256", sha256_file(p)}});
    }
    return {{"tool", "autoloop"},
            {"version", AUTOLOOP_VERSION},
            {"command", command},
            {"seeds", seeds},
            {"config", config},
            {"inputs", in},
            {"outputs", outputs}};
}

void RunManifest::write(const fs::path& dir) const {
    write_text(dir / "manifest.json", to_json().dump(2) + "\n");
}

std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw error(error_code::io_error, "cannot read " + path.string());
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(),
                                                                 EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("SHA-256 initialisation failed");
    }
    char buf[1 << 16];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        EVP_DigestUpdate(ctx.get(), buf, static_cast<std::size_t>(in.gcount()));
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), digest, &len);
    std::string hex;
    for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
    return hex;
}

int run(const std::vector<std::string>& args) {
    configure_logging();

    CLI::App app{"Loop-closure-aware odometry fine-tuning with a learned loss curriculum",
                 "autoloop"};
    app.require_subcommand(1);
    app.set_version_flag("--version", AUTOLOOP_VERSION);

    GenOptions gen;
    auto* g = app.add_subcommand("gen-scenes", "Generate synthetic scenes and feature files");
    auto* g_spec = g->add_option("--spec", gen.spec, "Scene spec JSON file")->check(CLI::ExistingFile);
    g->add_option("--preset", gen.preset, "Built-in scene set")
        ->check(CLI::IsMember({"corpus", "drift"}))
        ->excludes(g_spec);
    g->add_option("--out", gen.out, "Output directory")->required();
    g->add_option("--seed", gen.seed, "Base seed for scenes without an explicit seed");

    DbOptions db;
    auto* b = app.add_subcommand("build-db", "Detect and verify loop pairs over a scene directory");
    b->add_option("--scenes", db.scenes, "Directory of .features files")->required();
    b->add_option("--out", db.out, "Output directory")->required();
    b->add_option("--config", db.config, "Config JSON file")->check(CLI::ExistingFile);
    b->add_option("--seed", db.seed, "Codebook and RANSAC seed");
    b->add_option("--threshold", db.threshold, "Cosine similarity threshold");
    b->add_option("--min-inliers", db.min_inliers, "Minimum RANSAC inliers");
    b->add_option("--window", db.window, "Retrieval window in frames");
    b->add_option("--exclusion", db.exclusion, "Recent frames excluded from retrieval");
    b->add_option("--clusters", db.clusters, "Codebook size");

    TrainOptions tr;
    auto* t = app.add_subcommand("train", "Fine-tune one scene with loop supervision");
    t->add_option("--scene", tr.scene, "Scene file from gen-scenes")
        ->required()
        ->check(CLI::ExistingFile);
    t->add_option("--db", tr.db, "Loop database from build-db")->required()->check(CLI::ExistingFile);
    t->add_option("--out", tr.out, "Output directory")->required();
    t->add_option("--config", tr.config, "Config JSON file")->check(CLI::ExistingFile);
    t->add_option("--seed", tr.seed, "Training seed");
    t->add_option("--steps", tr.steps, "Training steps");
    t->add_option("--cadence", tr.cadence, "Agent update cadence in steps");
    t->add_option("--agent", tr.agent, "Schedule the loop weight with the agent")
        ->check(CLI::IsMember({"on", "off"}));
    t->add_option("--w-loop", tr.w_loop, "Fixed loop weight when the agent is off");

    EvalOptions ev;
    auto* e = app.add_subcommand("eval", "Absolute trajectory error");
    auto* e_est = e->add_option("--est", ev.est, "Estimated TUM trajectory")->check(CLI::ExistingFile);
    e->add_option("--runs", ev.runs, "Directory of training runs")
        ->check(CLI::ExistingDirectory)
        ->excludes(e_est);
    e->add_option("--gt", ev.gt, "Reference TUM trajectory")->required()->check(CLI::ExistingFile);
    e->add_option("--out", ev.out, "Output directory")->required();
    e->add_option("--align", ev.align, "Alignment")->check(CLI::IsMember({"rigid", "sim"}));
    e->add_option("--tolerance", ev.tolerance, "Timestamp association tolerance in seconds");

    CostOptions co;
    auto* c = app.add_subcommand("cost", "Offline loop-database cost model");
    c->add_option("--frames", co.frames, "Frames per scene");
    c->add_option("--scenes", co.scenes, "Number of scenes");
    c->add_option("--out", co.out, "Optional output directory");

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? ok : user_error;
    }

    try {
        if (g->parsed()) return cmd_gen_scenes(gen);
        if (b->parsed()) return cmd_build_db(db);
        if (t->parsed()) return cmd_train(tr);
        if (e->parsed()) return cmd_eval(ev);
        if (c->parsed()) return cmd_cost(co);
    } catch (const error& err) {
        spdlog::error("{}", err.what());
        return exit_for(err.code());
    } catch (const json::exception& err) {
        spdlog::error("invalid input: {}", err.what());
        return user_error;
    } catch (const fs::filesystem_error& err) {
        spdlog::error("{}", err.what());
        return user_error;
    } catch (const std::exception& err) {
        spdlog::error("internal error: {}", err.what());
        return internal_error;
    }
    return internal_error;
}

} // namespace autoloop::cli
