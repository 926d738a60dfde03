#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "histogen/corpus/manifest.hpp"
#include "histogen/diffusion/trainer.hpp"
#include "histogen/fid/score.hpp"
#include "histogen/sample/ddim.hpp"
#include "histogen/textcond/config.hpp"
#include "histogen/vae/train.hpp"

namespace histogen::pipeline {

struct PathsSection {
    std::string run_dir = "runs/default";
    std::string images;
    std::string reports;
    std::string scores;
    std::string vocab = "data/vocab.txt";
    std::string prompts = "prompts";
};

struct CorpusSection {
    double test_fraction = 0.2;
    corpus::Grouping grouping = corpus::Grouping::ByCase;
    Index patch_size = 256;  // toy pipeline uses 32
};

struct SummarizeSection {
    int budget = 35;
    std::string model = "gpt-3.5-turbo";
    int max_retries = 2;
    int concurrency = 1;
    bool truncate = false;
    std::string mock_script;  // empty => live OpenAI-compatible client
    std::string api_base = "https://api.openai.com";
    int min_interval_ms = 0;
};

struct VaeTrainSection {
    Index batch_size = 16;
    long steps = 5000;
    double lr = 1e-3;
};

struct UnetSection {
    Index base_width = 32;
    std::vector<int> channel_mult = {1, 2};
    std::vector<Index> attn_resolutions = {8, 4};
    Index heads = 4;
    Index time_embed_mult = 4;
    Index groups = 8;
};

struct TrainSection {
    Index batch_size = 16;
    int grad_accum_steps = 1;
    long max_iterations = 5000;
    double lr = 1e-4;
    double condition_dropout_prob = 0.1;
    std::string devices = "single";
    int device_count = 1;
    std::string precision = "full32";
    std::string loss_scaling = "none";
    long checkpoint_every = 1000;
    long log_every = 25;
};

struct SamplerSection {
    int steps = 50;
    double eta = 0.0;
    double guidance_scale = 1.75;
    Index batch_size = 32;
    int count = 256;            // captions drawn from the test split
    std::string spacing = "uniform";  // or quadratic
};

struct FidSection {
    std::string extractor = "toy";
    std::uint64_t extractor_seed = 17;
    double eps_stab = 1e-6;
    Index batch_size = 64;
};

// Single source of configuration for the staged pipeline. Every field the
// underlying method leaves implicit has a key here with a documented default;
// a resolved snapshot is persisted into each run directory so deterministic
// stages reproduce byte-identically from the snapshot alone.
struct PipelineConfig {
    std::string run_id = "run";
    std::uint64_t seed = 0;
    PathsSection paths;
    CorpusSection corpus;
    SummarizeSection summarize;
    textcond::TextCondConfig textcond;
    vae::AutoencoderConfig vae;
    VaeTrainSection vae_train;
    diffusion::ScheduleConfig schedule;
    UnetSection unet;
    TrainSection train;
    SamplerSection sampler;
    FidSection fid;

    static PipelineConfig from_file(const std::string& path);
    static PipelineConfig from_yaml_string(const std::string& text);

    // HISTOGEN_<SECTION>_<KEY> environment overrides; precedence is
    // flag > env > file > default (flags are applied by the CLI afterwards).
    void apply_env_overrides();
    void validate() const;

    nlohmann::json to_json() const;
    std::string to_yaml() const;
    void save_snapshot(const std::string& path) const;

    // Derived artifact locations inside run_dir.
    std::string manifest_path() const { return paths.run_dir + "/manifest.jsonl"; }
    std::string split_path() const { return paths.run_dir + "/split.json"; }
    std::string captioned_manifest_path() const {
        return paths.run_dir + "/manifest-captions-b" + std::to_string(summarize.budget) +
               ".jsonl";
    }
    std::string summary_cache_path() const { return paths.run_dir + "/summary-cache.jsonl"; }
    std::string summary_failures_path() const {
        return paths.run_dir + "/summary-failures-b" + std::to_string(summarize.budget) + ".json";
    }
    std::string vae_checkpoint_path() const { return paths.run_dir + "/vae.ckpt"; }
    std::string vae_metrics_path() const { return paths.run_dir + "/vae-metrics.jsonl"; }
    std::string ldm_checkpoint_path() const { return paths.run_dir + "/ldm.ckpt"; }
    std::string ldm_metrics_path() const { return paths.run_dir + "/ldm-metrics.jsonl"; }
    std::string samples_dir() const { return paths.run_dir + "/samples"; }
    std::string fid_report_path() const { return paths.run_dir + "/fid-report.json"; }
    std::string stage_report_path(const std::string& stage) const {
        return paths.run_dir + "/reports/" + stage + ".json";
    }
    std::string snapshot_path() const { return paths.run_dir + "/config-snapshot.yaml"; }

    // Context length follows the budget: summary + score clause must fit the
    // configured number of 77-token windows.
    int n_windows_for_budget(int budget) const;
};

}  // namespace histogen::pipeline
