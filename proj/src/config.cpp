#include "histogen/pipeline/config.hpp"

#include <yaml-cpp/yaml.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "histogen/sample/ddim.hpp"
#include "histogen/textcond/encoder.hpp"

namespace histogen::pipeline {

namespace {

template <class T>
void read(const YAML::Node& n, const char* key, T& out) {
    if (n && n[key]) out = n[key].as<T>();
}

void read_env(const char* name, std::string& out) {
    if (const char* v = std::getenv(name)) out = v;
}
template <class T>
void read_env_num(const char* name, T& out) {
    if (const char* v = std::getenv(name)) {
        std::istringstream is(v);
        T parsed{};
        if (is >> parsed) out = parsed;
    }
}

}  // namespace

PipelineConfig PipelineConfig::from_yaml_string(const std::string& text) {
    const YAML::Node root = YAML::Load(text);
    PipelineConfig c;
    read(root, "run_id", c.run_id);
    read(root, "seed", c.seed);

    const YAML::Node paths = root["paths"];
    read(paths, "run_dir", c.paths.run_dir);
    read(paths, "images", c.paths.images);
    read(paths, "reports", c.paths.reports);
    read(paths, "scores", c.paths.scores);
    read(paths, "vocab", c.paths.vocab);
    read(paths, "prompts", c.paths.prompts);

    if (const YAML::Node n = root["corpus"]; n) {
        read(n, "test_fraction", c.corpus.test_fraction);
        std::string g = corpus::to_string(c.corpus.grouping);
        read(n, "grouping", g);
        c.corpus.grouping = corpus::grouping_from_string(g);
        read(n, "patch_size", c.corpus.patch_size);
    }
    if (const YAML::Node n = root["summarize"]; n) {
        read(n, "budget", c.summarize.budget);
        read(n, "model", c.summarize.model);
        read(n, "max_retries", c.summarize.max_retries);
        read(n, "concurrency", c.summarize.concurrency);
        read(n, "truncate", c.summarize.truncate);
        read(n, "mock_script", c.summarize.mock_script);
        read(n, "api_base", c.summarize.api_base);
        read(n, "min_interval_ms", c.summarize.min_interval_ms);
    }
    if (const YAML::Node n = root["textcond"]; n) {
        read(n, "d_embed", c.textcond.d_embed);
        read(n, "n_windows", c.textcond.n_windows);
        std::string pm = textcond::to_string(c.textcond.positional_mode);
        read(n, "positional_mode", pm);
        c.textcond.positional_mode = textcond::positional_mode_from_string(pm);
        read(n, "encoder_seed", c.textcond.encoder_seed);
        read(n, "encoder_weights", c.textcond.encoder_weights);
    }
    if (const YAML::Node n = root["vae"]; n) {
        read(n, "f", c.vae.f);
        read(n, "z_channels", c.vae.z_channels);
        read(n, "base_width", c.vae.base_width);
        read(n, "kl_weight", c.vae.kl_weight);
        read(n, "image_size", c.vae.image_size);
        read(n, "groups", c.vae.groups);
    }
    if (const YAML::Node n = root["vae_train"]; n) {
        read(n, "batch_size", c.vae_train.batch_size);
        read(n, "steps", c.vae_train.steps);
        read(n, "lr", c.vae_train.lr);
    }
    if (const YAML::Node n = root["schedule"]; n) {
        std::string kind = diffusion::to_string(c.schedule.kind);
        read(n, "kind", kind);
        c.schedule.kind = diffusion::schedule_kind_from_string(kind);
        read(n, "T", c.schedule.T);
        read(n, "beta_start", c.schedule.beta_start);
        read(n, "beta_end", c.schedule.beta_end);
    }
    if (const YAML::Node n = root["unet"]; n) {
        read(n, "base_width", c.unet.base_width);
        read(n, "channel_mult", c.unet.channel_mult);
        read(n, "attn_resolutions", c.unet.attn_resolutions);
        read(n, "heads", c.unet.heads);
        read(n, "time_embed_mult", c.unet.time_embed_mult);
        read(n, "groups", c.unet.groups);
    }
    if (const YAML::Node n = root["train"]; n) {
        read(n, "batch_size", c.train.batch_size);
        read(n, "grad_accum_steps", c.train.grad_accum_steps);
        read(n, "max_iterations", c.train.max_iterations);
        read(n, "lr", c.train.lr);
        read(n, "condition_dropout_prob", c.train.condition_dropout_prob);
        read(n, "devices", c.train.devices);
        read(n, "device_count", c.train.device_count);
        read(n, "precision", c.train.precision);
        read(n, "loss_scaling", c.train.loss_scaling);
        read(n, "checkpoint_every", c.train.checkpoint_every);
        read(n, "log_every", c.train.log_every);
    }
    if (const YAML::Node n = root["sampler"]; n) {
        read(n, "steps", c.sampler.steps);
        read(n, "eta", c.sampler.eta);
        read(n, "guidance_scale", c.sampler.guidance_scale);
        read(n, "batch_size", c.sampler.batch_size);
        read(n, "count", c.sampler.count);
        read(n, "spacing", c.sampler.spacing);
    }
    if (const YAML::Node n = root["fid"]; n) {
        read(n, "extractor", c.fid.extractor);
        read(n, "extractor_seed", c.fid.extractor_seed);
        read(n, "eps_stab", c.fid.eps_stab);
        read(n, "batch_size", c.fid.batch_size);
    }
    return c;
}

PipelineConfig PipelineConfig::from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read config: " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    PipelineConfig c = from_yaml_string(ss.str());
    c.apply_env_overrides();
    return c;
}

void PipelineConfig::apply_env_overrides() {
    read_env("HISTOGEN_RUN_ID", run_id);
    read_env_num("HISTOGEN_SEED", seed);
    read_env("HISTOGEN_PATHS_RUN_DIR", paths.run_dir);
    read_env("HISTOGEN_PATHS_IMAGES", paths.images);
    read_env("HISTOGEN_PATHS_REPORTS", paths.reports);
    read_env("HISTOGEN_PATHS_SCORES", paths.scores);
    read_env("HISTOGEN_PATHS_VOCAB", paths.vocab);
    read_env("HISTOGEN_PATHS_PROMPTS", paths.prompts);
    read_env_num("HISTOGEN_SUMMARIZE_BUDGET", summarize.budget);
    read_env("HISTOGEN_SUMMARIZE_MODEL", summarize.model);
    read_env_num("HISTOGEN_SUMMARIZE_MAX_RETRIES", summarize.max_retries);
    read_env("HISTOGEN_SUMMARIZE_MOCK_SCRIPT", summarize.mock_script);
    read_env_num("HISTOGEN_TEXTCOND_N_WINDOWS", textcond.n_windows);
    read_env_num("HISTOGEN_VAE_TRAIN_STEPS", vae_train.steps);
    read_env_num("HISTOGEN_TRAIN_MAX_ITERATIONS", train.max_iterations);
    read_env_num("HISTOGEN_TRAIN_BATCH_SIZE", train.batch_size);
    read_env("HISTOGEN_TRAIN_PRECISION", train.precision);
    read_env_num("HISTOGEN_SAMPLER_COUNT", sampler.count);
    read_env_num("HISTOGEN_SAMPLER_STEPS", sampler.steps);
}

int PipelineConfig::n_windows_for_budget(int budget) const {
    // summary + the score clause must fit; one window up to 73 summary
    // tokens, two windows beyond (matches the memory-vs-length tradeoff).
    const int score_tokens = 4;
    const int total = budget + score_tokens;
    return total <= 77 ? 1 : 2;
}

void PipelineConfig::validate() const {
    vae.validate();
    if (!(corpus.test_fraction > 0 && corpus.test_fraction < 1)) {
        throw ConfigError("corpus.test_fraction must lie in (0,1)");
    }
    if (summarize.budget < 1) throw ConfigError("summarize.budget must be >= 1");
    if (textcond.n_windows < 1 || textcond.n_windows > 2) {
        throw ConfigError("textcond.n_windows must be 1 or 2");
    }
    if (sampler.steps < 1 || sampler.steps > schedule.T) {
        throw ConfigError("sampler.steps must lie in [1, schedule.T]");
    }
    sample::spacing_from_string(sampler.spacing);
    // surface bad enum values early
    diffusion::devices_from_string(train.devices);
    nn::compute_from_string(train.precision);
    nn::loss_scaling_from_string(train.loss_scaling);
}

nlohmann::json PipelineConfig::to_json() const {
    return {{"run_id", run_id},
            {"seed", seed},
            {"paths",
             {{"run_dir", paths.run_dir},
              {"images", paths.images},
              {"reports", paths.reports},
              {"scores", paths.scores},
              {"vocab", paths.vocab},
              {"prompts", paths.prompts}}},
            {"corpus",
             {{"test_fraction", corpus.test_fraction},
              {"grouping", corpus::to_string(corpus.grouping)},
              {"patch_size", corpus.patch_size}}},
            {"summarize",
             {{"budget", summarize.budget},
              {"model", summarize.model},
              {"max_retries", summarize.max_retries},
              {"concurrency", summarize.concurrency},
              {"truncate", summarize.truncate},
              {"mock_script", summarize.mock_script},
              {"api_base", summarize.api_base},
              {"min_interval_ms", summarize.min_interval_ms}}},
            {"textcond", textcond.to_json()},
            {"vae", vae.to_json()},
            {"vae_train",
             {{"batch_size", vae_train.batch_size},
              {"steps", vae_train.steps},
              {"lr", vae_train.lr}}},
            {"schedule", schedule.to_json()},
            {"unet",
             {{"base_width", unet.base_width},
              {"channel_mult", unet.channel_mult},
              {"attn_resolutions", unet.attn_resolutions},
              {"heads", unet.heads},
              {"time_embed_mult", unet.time_embed_mult},
              {"groups", unet.groups}}},
            {"train",
             {{"batch_size", train.batch_size},
              {"grad_accum_steps", train.grad_accum_steps},
              {"max_iterations", train.max_iterations},
              {"lr", train.lr},
              {"condition_dropout_prob", train.condition_dropout_prob},
              {"devices", train.devices},
              {"device_count", train.device_count},
              {"precision", train.precision},
              {"loss_scaling", train.loss_scaling},
              {"checkpoint_every", train.checkpoint_every},
              {"log_every", train.log_every}}},
            {"sampler",
             {{"steps", sampler.steps},
              {"eta", sampler.eta},
              {"guidance_scale", sampler.guidance_scale},
              {"batch_size", sampler.batch_size},
              {"count", sampler.count},
              {"spacing", sampler.spacing}}},
            {"fid",
             {{"extractor", fid.extractor},
              {"extractor_seed", fid.extractor_seed},
              {"eps_stab", fid.eps_stab},
              {"batch_size", fid.batch_size}}}};
}

namespace {

void emit_yaml(YAML::Emitter& out, const nlohmann::json& j) {
    switch (j.type()) {
        case nlohmann::json::value_t::object:
            out << YAML::BeginMap;
            for (const auto& [k, v] : j.items()) {
                out << YAML::Key << k << YAML::Value;
                emit_yaml(out, v);
            }
            out << YAML::EndMap;
            break;
        case nlohmann::json::value_t::array:
            out << YAML::Flow << YAML::BeginSeq;
            for (const auto& v : j) emit_yaml(out, v);
            out << YAML::EndSeq;
            break;
        case nlohmann::json::value_t::string:
            out << j.get<std::string>();
            break;
        case nlohmann::json::value_t::boolean:
            out << j.get<bool>();
            break;
        case nlohmann::json::value_t::number_integer:
            out << j.get<long long>();
            break;
        case nlohmann::json::value_t::number_unsigned:
            out << j.get<unsigned long long>();
            break;
        case nlohmann::json::value_t::number_float:
            out << j.get<double>();
            break;
        default:
            out << YAML::Null;
            break;
    }
}

}  // namespace

std::string PipelineConfig::to_yaml() const {
    YAML::Emitter out;
    emit_yaml(out, to_json());
    return std::string(out.c_str()) + "\n";
}

void PipelineConfig::save_snapshot(const std::string& path) const {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write config snapshot: " + path);
    os << to_yaml();
}

}  // namespace histogen::pipeline
