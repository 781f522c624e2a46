#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nst/config.hpp"
#include "nst/error.hpp"
#include "nst/hash.hpp"
#include "nst/train.hpp"

namespace nst {

// Atomic file emission (temp + rename) so a crash mid-run never leaves a
// partially written artifact behind.

inline void write_text_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open file for writing", tmp);
        out << content;
        if (!out) throw IoError("write failed", tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("rename failed: " + ec.message(), path);
}

inline void write_json_atomic(const std::string& path, const nlohmann::json& j) {
    write_text_atomic(path, j.dump(2) + "\n");
}

inline nlohmann::json epoch_record_to_json(const EpochRecord& r) {
    return {{"epoch", r.epoch},
            {"lr", r.lr},
            {"train_loss_labeled", r.train_loss_labeled},
            {"train_loss_pseudo", r.train_loss_pseudo},
            {"val_accuracy", r.val_accuracy}};
}

// JSON-lines metrics: one record per epoch.
inline void write_metrics_jsonl(const std::string& path, const std::vector<EpochRecord>& log) {
    std::string body;
    for (const auto& r : log) body += epoch_record_to_json(r).dump() + "\n";
    write_text_atomic(path, body);
}

inline std::string timestamp_utc() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

// Inputs plus the manifest determine every output byte: command, resolved
// config, seed, and content hashes of all consumed artifacts.
class RunManifest {
public:
    RunManifest(std::string command, const Config& config) {
        j_["command"] = std::move(command);
        j_["config"] = config_to_json(config);
        j_["seed"] = config.seed;
        j_["started_at"] = timestamp_utc();
        j_["inputs"] = nlohmann::json::object();
        j_["outputs"] = nlohmann::json::array();
    }

    void add_input(const std::string& name, const std::string& content_hash) {
        j_["inputs"][name] = content_hash;
    }

    void add_output(const std::string& path) { j_["outputs"].push_back(path); }

    void write(const std::string& out_dir) {
        j_["finished_at"] = timestamp_utc();
        write_json_atomic(out_dir + "/manifest.json", j_);
    }

private:
    nlohmann::json j_;
};

inline void ensure_out_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory: " + ec.message(), dir);
}

// CSV export used by the plotting-oriented outputs.
inline std::string csv_line(const std::vector<std::string>& cells) {
    std::string line;
    for (std::size_t i = 0; i < cells.size(); ++i) line += (i ? "," : "") + cells[i];
    return line + "\n";
}

}  // namespace nst
