#pragma once

#include "diffrx/chansim.hpp"
#include "diffrx/denoiser.hpp"
#include "diffrx/receiver.hpp"
#include "diffrx/sampler.hpp"
#include "diffrx/trainer.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace diffrx::harness {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kVersion = "diffrx 0.3.0";

struct DatasetSizes {
    std::size_t n_train = 5000;
    std::size_t n_val = 500;
    std::size_t n_test = 200;
};

struct EvalSpec {
    std::vector<std::size_t> steps{50, 370};
    std::vector<sampler::Pipeline> pipelines{sampler::Pipeline::vanilla, sampler::Pipeline::repaint};
    std::vector<std::string> estimators{"ls-linear", "lmmse", "dm-vanilla", "dm-repaint"};
    std::vector<double> snr_db{0.0, 10.0, 20.0};
    double sweep_snr_db = 20.0;
    std::size_t n_grids = 100;
    std::size_t n_frames = 100;
    std::size_t ber_steps = 50;  // inference steps used by dm-* in the BER sweep
};

// Everything a run needs; JSON keys mirror the field names.
struct RunConfig {
    chansim::ChannelModelConfig channel;
    DatasetSizes dataset;
    trainer::PilotSpec pilots;
    std::vector<std::size_t> spacings{4, 16, 32};  // one model per comb spacing
    receiver::Modulation modulation = receiver::Modulation::qpsk;
    trainer::ScheduleSpec schedule;
    denoiser::DenoiserConfig denoiser;
    trainer::TrainConfig trainer;
    sampler::SamplerConfig sampler;
    EvalSpec evaluation;
    std::optional<std::uint64_t> seed;

    // Field-level ConfigError on the first violation.
    void validate() const;
    std::uint64_t seed_or_default() const { return seed.value_or(1); }
    // Trainer/denoiser configs for one comb spacing, wired to the shared
    // schedule and seed.
    trainer::TrainConfig train_config(std::size_t spacing) const;
    denoiser::DenoiserConfig denoiser_config() const;
};

// Missing keys keep their defaults; unknown keys and wrong types are
// ConfigErrors naming the JSON path.
RunConfig config_from_json(const json& j);
json config_to_json(const RunConfig& cfg);
RunConfig load_config(const fs::path& path);

// Sorted keys, no whitespace: stable under key reordering.
std::string canonical_dump(const json& j);
std::string sha256_hex(std::string_view bytes);
std::string file_sha256(const fs::path& path);
std::string config_hash(const RunConfig& cfg);

struct FileDigest {
    std::string path;
    std::string sha256;
};

struct RunManifest {
    std::string command;
    std::string config_hash;
    std::string version = kVersion;
    std::string started_utc;
    std::string finished_utc;
    std::uint64_t seed = 0;
    std::vector<FileDigest> inputs;
    std::vector<FileDigest> outputs;
    json extra = json::object();  // padding, threads, per-density notes

    json to_json() const;
};

void write_manifest(const fs::path& dir, const RunManifest& m);
std::string utc_now();

// Worker cap from DIFFRX_THREADS (unset -> 1). Malformed values are
// ConfigErrors.
std::size_t worker_cap();

struct CommonOptions {
    fs::path out;
    bool force = false;
    bool reproducible = false;
};

std::string checkpoint_name(std::size_t spacing);       // model_d16.ckpt
std::string resume_checkpoint_name(std::size_t spacing);  // last_d16.ckpt

// Returns the manifest it wrote.
RunManifest cmd_generate(const RunConfig& cfg, const CommonOptions& opt);
RunManifest cmd_train(const RunConfig& cfg, const fs::path& data_dir, const CommonOptions& opt, bool resume);
RunManifest cmd_evaluate(const RunConfig& cfg, const fs::path& data_dir, const fs::path& model_dir,
                         const CommonOptions& opt);
RunManifest cmd_baseline(const RunConfig& cfg, const fs::path& data_dir, const CommonOptions& opt);

// Long format: series,x,y,err,y_db. Accepts a sweep CSV, a BER CSV, a
// baseline CSV or its own output.
std::string plotdata(const std::string& csv_text);

} // namespace diffrx::harness
