// Output plumbing for the study drivers: deterministic CSV writers, the
// run manifest (written atomically at run end), and a small worker pool
// for independent sweep points.
#pragma once

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "evload/common.hpp"

namespace evload {

inline std::string format_num(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", x);
    return std::string(buf);
}

// One CSV table with a mandatory header row naming columns and units.
class CsvWriter {
public:
    CsvWriter(std::string path, std::vector<std::string> columns)
        : path_(std::move(path)) {
        for (std::size_t i = 0; i < columns.size(); ++i)
            header_ += (i ? "," : "") + columns[i];
        header_ += "\n";
    }

    void row(const std::vector<double>& values) {
        for (std::size_t i = 0; i < values.size(); ++i)
            body_ += (i ? "," : "") + format_num(values[i]);
        body_ += "\n";
    }

    void row_mixed(const std::vector<std::string>& values) {
        for (std::size_t i = 0; i < values.size(); ++i)
            body_ += (i ? "," : "") + values[i];
        body_ += "\n";
    }

    void write() const {
        std::filesystem::create_directories(
            std::filesystem::path(path_).parent_path().empty()
                ? "."
                : std::filesystem::path(path_).parent_path().string());
        std::ofstream f(path_, std::ios::binary);
        if (!f) throw ParseError("cannot write " + path_);
        f << header_ << body_;
    }

    const std::string& path() const { return path_; }

private:
    std::string path_, header_, body_;
};

// Wall-clock stage timings plus per-point convergence flags; written
// atomically (temp file + rename) when the run finishes.
class RunManifest {
public:
    RunManifest(std::string path, const std::string& config_text)
        : path_(std::move(path)), t0_(std::chrono::steady_clock::now()) {
        digest_ = fnv1a(config_text);
    }

    void stage(const std::string& name, double wall_ms) {
        stages_.emplace_back(name, wall_ms);
    }

    void point(const std::string& tag, bool converged) {
        points_.emplace_back(tag, converged);
        if (!converged) any_failed_ = true;
    }

    bool any_failed() const { return any_failed_; }

    void write() const {
        const std::string tmp = path_ + ".tmp";
        {
            std::filesystem::path dir = std::filesystem::path(path_).parent_path();
            if (!dir.empty()) std::filesystem::create_directories(dir);
            std::ofstream f(tmp, std::ios::binary);
            if (!f) throw ParseError("cannot write " + tmp);
            char dig[20];
            std::snprintf(dig, sizeof dig, "%016llx", (unsigned long long)digest_);
            f << "config_digest " << dig << "\n";
#ifdef EVLOAD_VERSION
            f << "tool_version " << EVLOAD_VERSION << "\n";
#else
            f << "tool_version unknown\n";
#endif
            const double total =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                          t0_)
                    .count();
            f << "total_wall_ms " << format_num(total) << "\n";
            for (const auto& [name, ms] : stages_)
                f << "stage " << name << " " << format_num(ms) << "\n";
            for (const auto& [tag, ok] : points_)
                f << "point " << tag << " " << (ok ? "converged" : "FAILED") << "\n";
        }
        std::filesystem::rename(tmp, path_);
    }

private:
    std::string path_;
    std::uint64_t digest_ = 0;
    std::chrono::steady_clock::time_point t0_;
    std::vector<std::pair<std::string, double>> stages_;
    std::vector<std::pair<std::string, bool>> points_;
    bool any_failed_ = false;
};

// Index-ordered parallel map: results are written into per-index slots so
// aggregation order never depends on scheduling.
inline void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
    if (jobs <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    auto worker = [&] {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= n) return;
            fn(i);
        }
    };
    std::vector<std::thread> pool;
    const int nw = std::min(jobs, n);
    pool.reserve(nw);
    for (int w = 0; w < nw; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
}

class StageTimer {
public:
    StageTimer() : t0_(std::chrono::steady_clock::now()) {}
    double ms() const {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                         t0_)
            .count();
    }

private:
    std::chrono::steady_clock::time_point t0_;
};

}  // namespace evload
