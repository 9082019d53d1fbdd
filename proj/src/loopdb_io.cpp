#include "autoloop/error.hpp"
#include "autoloop/loopdb.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iterator>
#include <string_view>

namespace autoloop::loopdb {

namespace {

std::vector<std::string_view> tokens(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
        const std::size_t start = i;
        while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
        if (i > start) out.push_back(line.substr(start, i - start));
    }
    return out;
}

[[noreturn]] void malformed(const std::filesystem::path& path, std::size_t line,
                            const std::string& why) {
    throw error(error_code::malformed_line,
                path.string() + " line " + std::to_string(line) + ": " + why);
}

template <typename T>
T number(std::string_view tok, const std::filesystem::path& path, std::size_t line) {
    T v{};
    const auto [end, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || end != tok.data() + tok.size()) {
        malformed(path, line, "bad number '" + std::string(tok) + "'");
    }
    if constexpr (std::is_floating_point_v<T>) {
        if (!std::isfinite(v)) malformed(path, line, "non-finite value");
    }
    return v;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw error(error_code::io_error, "cannot write " + path.string());
    }
    return out;
}

} // namespace

void write_features(const std::filesystem::path& path, std::span<const Frame> frames, int dim) {
    auto out = open_out(path);
    fmt::memory_buffer buf;
    fmt::format_to(std::back_inserter(buf), "D {}\n", dim);
    for (std::size_t k = 0; k < frames.size(); ++k) {
        fmt::format_to(std::back_inserter(buf), "frame {} {}\n", k, frames[k].size());
        for (const auto& f : frames[k]) {
            if (f.descriptor.size() != dim) {
                throw error(error_code::dimension_mismatch, "feature descriptor size differs from D");
            }
            fmt::format_to(std::back_inserter(buf), "{:.9g} {:.9g}", f.position.x(), f.position.y());
            for (Eigen::Index d = 0; d < dim; ++d) {
                fmt::format_to(std::back_inserter(buf), " {:.9g}", f.descriptor(d));
            }
            buf.push_back('\n');
        }
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

FeatureFile read_features(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw error(error_code::io_error, "cannot open " + path.string());
    }
    FeatureFile ff;
    std::string line;
    std::size_t ln = 0;
    std::size_t remaining = 0;
    bool header = false;
    while (std::getline(in, line)) {
        ++ln;
        const auto t = tokens(line);
        if (t.empty()) continue;
        if (!header) {
            if (t.size() != 2 || t[0] != "D") malformed(path, ln, "expected 'D <dim>'");
            ff.dim = number<int>(t[1], path, ln);
            if (ff.dim < 1) malformed(path, ln, "descriptor dimension must be positive");
            header = true;
            continue;
        }
        if (remaining == 0) {
            if (t.size() != 3 || t[0] != "frame") malformed(path, ln, "expected 'frame <index> <count>'");
            const auto idx = number<std::size_t>(t[1], path, ln);
            if (idx != ff.frames.size()) {
                malformed(path, ln, "frame index " + std::to_string(idx) + ", expected " +
                                        std::to_string(ff.frames.size()));
            }
            remaining = number<std::size_t>(t[2], path, ln);
            ff.frames.emplace_back();
            ff.frames.back().reserve(remaining);
            continue;
        }
        if (t.size() != static_cast<std::size_t>(ff.dim) + 2) {
            malformed(path, ln, "expected " + std::to_string(ff.dim + 2) + " fields, got " +
                                    std::to_string(t.size()));
        }
        LocalFeature f;
        f.position = {number<double>(t[0], path, ln), number<double>(t[1], path, ln)};
        f.descriptor.resize(ff.dim);
        for (int d = 0; d < ff.dim; ++d) {
            f.descriptor(d) = number<double>(t[static_cast<std::size_t>(d) + 2], path, ln);
        }
        const double n = f.descriptor.norm();
        if (!(n > 0.0)) malformed(path, ln, "zero descriptor");
        f.descriptor /= n;
        ff.frames.back().push_back(std::move(f));
        --remaining;
    }
    if (!header) {
        malformed(path, ln, "missing 'D <dim>' header");
    }
    if (remaining != 0) {
        malformed(path, ln, "file ends " + std::to_string(remaining) + " features short");
    }
    return ff;
}

void write_database(const std::filesystem::path& path, const LoopDatabase& db) {
    auto out = open_out(path);
    nlohmann::ordered_json scenes = nlohmann::ordered_json::array();
    for (const auto& s : db.scenes) {
        scenes.push_back({{"scene", s.scene}, {"frames", s.frames}, {"skipped", s.skipped},
                          {"pairs", s.pairs}});
    }
    const nlohmann::ordered_json header = {{"format", "autoloop-loopdb"},
                                           {"version", 1},
                                           {"seed", db.params.seed},
                                           {"params", db.params.to_json()},
                                           {"scenes", scenes}};
    out << header.dump() << '\n';
    for (const auto& p : db.pairs) {
        const nlohmann::ordered_json row = {{"scene", p.scene},
                                            {"frame_i", p.frame_i},
                                            {"frame_j", p.frame_j},
                                            {"similarity", p.similarity},
                                            {"inliers", p.inliers}};
        out << row.dump() << '\n';
    }
}

LoopDatabase read_database(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw error(error_code::io_error, "cannot open " + path.string());
    }
    LoopDatabase db;
    std::string line;
    std::size_t ln = 0;
    bool header = false;
    while (std::getline(in, line)) {
        ++ln;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            if (!header) {
                if (j.value("format", std::string()) != "autoloop-loopdb") {
                    malformed(path, ln, "not a loop database (missing provenance header)");
                }
                db.params = BuildParams::from_json(j.at("params"));
                for (const auto& s : j.value("scenes", nlohmann::json::array())) {
                    db.scenes.push_back({s.at("scene").get<std::string>(),
                                         s.at("frames").get<std::size_t>(),
                                         s.at("skipped").get<std::size_t>(),
                                         s.at("pairs").get<std::size_t>()});
                }
                header = true;
                continue;
            }
            LoopPair p;
            p.scene = j.at("scene").get<std::string>();
            p.frame_i = j.at("frame_i").get<std::size_t>();
            p.frame_j = j.at("frame_j").get<std::size_t>();
            p.similarity = j.at("similarity").get<double>();
            p.inliers = j.at("inliers").get<int>();
            if (p.frame_i >= p.frame_j) malformed(path, ln, "pair needs frame_i < frame_j");
            db.pairs.push_back(std::move(p));
        } catch (const nlohmann::json::exception& e) {
            malformed(path, ln, e.what());
        }
    }
    if (!header) {
        malformed(path, ln, "empty loop database file");
    }
    std::sort(db.pairs.begin(), db.pairs.end(),
              [](const LoopPair& a, const LoopPair& b) { return a.key() < b.key(); });
    const auto dup = std::adjacent_find(db.pairs.begin(), db.pairs.end(),
                                        [](const LoopPair& a, const LoopPair& b) {
                                            return a.key() == b.key();
                                        });
    if (dup != db.pairs.end()) {
        malformed(path, 0, "duplicate pair " + dup->scene + " (" + std::to_string(dup->frame_i) +
                               ", " + std::to_string(dup->frame_j) + ")");
    }
    return db;
}

void write_histogram(const std::filesystem::path& path, const LoopDatabase& db) {
    auto out = open_out(path);
    out << "scene,frames,skipped,pairs\n";
    for (const auto& s : db.scenes) {
        out << s.scene << ',' << s.frames << ',' << s.skipped << ',' << s.pairs << '\n';
    }
}

} // namespace autoloop::loopdb
