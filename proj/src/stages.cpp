#include "histogen/pipeline/stages.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>

#include "histogen/core/sha256.hpp"
#include "histogen/fid/score.hpp"
#include "histogen/sample/generate.hpp"
#include "histogen/summarize/summarizer.hpp"

namespace histogen::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(Stage s) {
    switch (s) {
        case Stage::CorpusBuild: return "corpus-build";
        case Stage::CorpusSplit: return "corpus-split";
        case Stage::Summarize: return "summarize";
        case Stage::TrainVae: return "train-vae";
        case Stage::TrainLdm: return "train-ldm";
        case Stage::Sample: return "sample";
        case Stage::Fid: return "fid";
    }
    return "?";
}

Stage stage_from_string(const std::string& s) {
    if (s == "corpus-build") return Stage::CorpusBuild;
    if (s == "corpus-split") return Stage::CorpusSplit;
    if (s == "summarize") return Stage::Summarize;
    if (s == "train-vae") return Stage::TrainVae;
    if (s == "train-ldm") return Stage::TrainLdm;
    if (s == "sample") return Stage::Sample;
    if (s == "fid") return Stage::Fid;
    throw ConfigError("unknown stage '" + s +
                      "' (corpus-build|corpus-split|summarize|train-vae|train-ldm|sample|fid)");
}

json StageReport::to_json() const {
    return {{"stage", stage},        {"ok", ok},       {"duration_ms", duration_ms},
            {"artifacts", artifacts}, {"error", error}, {"extra", extra}};
}

namespace {

void require_artifact(const std::string& path, const std::string& what,
                      const std::string& producer) {
    if (!fs::exists(path)) {
        throw ConfigError("missing " + what + " (" + path + "); run stage '" + producer +
                          "' first");
    }
}

std::unique_ptr<summarize::CompletionClient> make_client(const PipelineConfig& c) {
    if (!c.summarize.mock_script.empty()) {
        return summarize::MockClient::from_script(c.summarize.mock_script);
    }
    summarize::OpenAIConfig oc;
    oc.base_url = c.summarize.api_base;
    oc.model = c.summarize.model;
    oc.min_interval_ms = c.summarize.min_interval_ms;
    return summarize::make_openai_client(oc);
}

diffusion::LdmTrainOptions ldm_options(const PipelineConfig& c) {
    diffusion::LdmTrainOptions opt;
    opt.train.batch_size = c.train.batch_size;
    opt.train.grad_accum_steps = c.train.grad_accum_steps;
    opt.train.max_iterations = c.train.max_iterations;
    opt.train.lr = c.train.lr;
    opt.train.condition_dropout_prob = c.train.condition_dropout_prob;
    opt.train.devices = diffusion::devices_from_string(c.train.devices);
    opt.train.device_count = c.train.device_count;
    opt.train.seed = derive_seed(c.seed, "train-ldm");
    opt.train.precision.compute = nn::compute_from_string(c.train.precision);
    opt.train.precision.loss_scaling = nn::loss_scaling_from_string(c.train.loss_scaling);
    opt.train.checkpoint_every = c.train.checkpoint_every;
    opt.train.log_every = c.train.log_every;
    opt.schedule = c.schedule;
    opt.unet.in_channels = c.vae.z_channels;
    opt.unet.base_width = c.unet.base_width;
    opt.unet.channel_mult = c.unet.channel_mult;
    opt.unet.attn_resolutions = c.unet.attn_resolutions;
    opt.unet.heads = c.unet.heads;
    opt.unet.context_dim = c.textcond.d_embed;
    opt.unet.context_len = c.textcond.context_len();
    opt.unet.time_embed_mult = c.unet.time_embed_mult;
    opt.unet.groups = c.unet.groups;
    opt.unet.latent_size = c.vae.image_size / c.vae.f;
    opt.textcond = c.textcond;
    opt.textcond.vocab_path = c.paths.vocab;
    opt.vae_checkpoint = c.vae_checkpoint_path();
    opt.image_root = c.paths.run_dir;  // manifest-relative image paths
    opt.metrics_path = c.ldm_metrics_path();
    opt.checkpoint_path = c.ldm_checkpoint_path();
    return opt;
}

std::vector<corpus::PatchRecord> test_caption_rows(const corpus::Manifest& m, int count) {
    std::vector<corpus::PatchRecord> rows;
    for (const auto& r : m.records) {
        if (r.split == corpus::Split::Test) rows.push_back(r);
    }
    if (rows.empty()) {  // splits not assigned: sample over everything
        rows = m.records;
    }
    if (count > 0 && static_cast<int>(rows.size()) > count) {
        rows.resize(static_cast<std::size_t>(count));
    }
    return rows;
}

StageReport execute(Stage stage, const PipelineConfig& c) {
    StageReport report;
    report.stage = to_string(stage);

    switch (stage) {
        case Stage::CorpusBuild: {
            if (!fs::is_directory(c.paths.images)) {
                throw ConfigError("paths.images directory not found: " + c.paths.images);
            }
            corpus::Manifest m = corpus::build_manifest(c.paths.images, c.paths.reports,
                                                         c.paths.scores, c.paths.run_dir);
            corpus::save_manifest(c.manifest_path(), m);
            report.artifacts.push_back(c.manifest_path());
            report.extra["records"] = m.size();
            break;
        }
        case Stage::CorpusSplit: {
            require_artifact(c.manifest_path(), "manifest", "corpus-build");
            corpus::Manifest m = corpus::load_manifest(c.manifest_path());
            corpus::SplitSpec spec;
            spec.seed = derive_seed(c.seed, "corpus-split");
            spec.test_fraction = c.corpus.test_fraction;
            spec.grouping = c.corpus.grouping;
            const corpus::SplitAssignment a = corpus::assign_splits(m, spec);
            corpus::save_manifest(c.manifest_path(), m);
            corpus::save_split_sidecar(c.split_path(), a);
            report.artifacts = {c.manifest_path(), c.split_path()};
            int n_test = 0;
            for (const auto& [k, v] : a.assignments) n_test += v == corpus::Split::Test;
            report.extra["groups"] = a.assignments.size();
            report.extra["test_groups"] = n_test;
            break;
        }
        case Stage::Summarize: {
            require_artifact(c.manifest_path(), "manifest", "corpus-build");
            corpus::Manifest m = corpus::load_manifest(c.manifest_path());
            auto client = make_client(c);
            summarize::SummaryCache cache(c.summary_cache_path());
            summarize::CorpusSummarizeOptions opt;
            opt.token_budget = c.summarize.budget;
            opt.max_retries = c.summarize.max_retries;
            opt.concurrency = c.summarize.concurrency;
            opt.truncate_fallback = c.summarize.truncate;
            opt.prompt_chain = summarize::load_prompt_chain(c.paths.prompts);
            textcond::Tokenizer tokenizer(c.paths.vocab);
            const summarize::CorpusSummaryReport r =
                summarize::summarize_corpus(m, opt, *client, &cache, tokenizer);
            corpus::save_manifest(c.captioned_manifest_path(), m);
            report.artifacts.push_back(c.captioned_manifest_path());
            report.extra["cases_total"] = r.cases_total;
            report.extra["cases_cached"] = r.cases_cached;
            report.extra["cases_failed"] = r.cases_failed;
            report.extra["client_calls"] = client->total_calls();
            if (r.cases_failed > 0) {
                json failures = json::array();
                for (const auto& f : r.failures) {
                    failures.push_back(
                        {{"case_id", f.case_id}, {"attempts", f.attempts}, {"error", f.error}});
                }
                std::ofstream os(c.summary_failures_path());
                os << failures.dump(2) << '\n';
                report.artifacts.push_back(c.summary_failures_path());
            }
            break;
        }
        case Stage::TrainVae: {
            require_artifact(c.manifest_path(), "manifest", "corpus-build");
            corpus::Manifest m = corpus::load_manifest(c.manifest_path());
            vae::VaeTrainOptions opt;
            opt.batch_size = c.vae_train.batch_size;
            opt.steps = c.vae_train.steps;
            opt.lr = c.vae_train.lr;
            opt.seed = derive_seed(c.seed, "train-vae");
            opt.metrics_path = c.vae_metrics_path();
            opt.checkpoint_path = c.vae_checkpoint_path();
            const vae::VaeTrainResult r =
                vae::train_autoencoder(m, c.paths.run_dir, c.vae, opt);
            report.artifacts = {c.vae_checkpoint_path(), c.vae_metrics_path()};
            report.extra["first_loss"] = r.first_loss;
            report.extra["final_smoothed_loss"] = r.final_smoothed_loss;
            report.extra["scale_factor"] = r.scale_factor;
            break;
        }
        case Stage::TrainLdm: {
            require_artifact(c.captioned_manifest_path(), "captioned manifest", "summarize");
            require_artifact(c.vae_checkpoint_path(), "VAE checkpoint", "train-vae");
            corpus::Manifest m = corpus::load_manifest(c.captioned_manifest_path());
            const diffusion::LdmTrainOptions opt = ldm_options(c);
            const diffusion::LdmTrainResult r = diffusion::train_ldm(m, opt);
            report.artifacts = {c.ldm_checkpoint_path(), c.ldm_metrics_path()};
            report.extra["first_loss"] = r.first_loss;
            report.extra["final_smoothed_loss"] = r.final_smoothed_loss;
            report.extra["peak_mem_bytes"] = r.peak_mem_bytes;
            break;
        }
        case Stage::Sample: {
            require_artifact(c.ldm_checkpoint_path(), "LDM checkpoint", "train-ldm");
            require_artifact(c.vae_checkpoint_path(), "VAE checkpoint", "train-vae");
            require_artifact(c.captioned_manifest_path(), "captioned manifest", "summarize");
            const corpus::Manifest m = corpus::load_manifest(c.captioned_manifest_path());
            sample::GenerateOptions opt;
            opt.sampler.n_steps = c.sampler.steps;
            opt.sampler.eta = c.sampler.eta;
            opt.sampler.guidance_scale = c.sampler.guidance_scale;
            opt.sampler.seed = derive_seed(c.seed, "sample");
            opt.sampler.batch_size = c.sampler.batch_size;
            opt.sampler.spacing = sample::spacing_from_string(c.sampler.spacing);
            opt.ldm_checkpoint = c.ldm_checkpoint_path();
            opt.vae_checkpoint = c.vae_checkpoint_path();
            opt.vocab_path = c.paths.vocab;
            opt.out_dir = c.samples_dir();
            const auto rows = test_caption_rows(m, c.sampler.count);
            const sample::GenerateResult r = sample::generate(rows, opt);
            report.artifacts = {c.samples_dir(), r.manifest_path};
            report.extra["n_images"] = r.n_images;
            break;
        }
        case Stage::Fid: {
            require_artifact(c.samples_dir(), "generated samples", "sample");
            require_artifact(c.captioned_manifest_path(), "captioned manifest", "summarize");
            const corpus::Manifest m = corpus::load_manifest(c.captioned_manifest_path());
            std::vector<std::string> real =
                corpus::image_paths(m, c.paths.run_dir, corpus::Split::Test);
            if (real.empty()) real = corpus::image_paths(m, c.paths.run_dir,
                                                         corpus::Split::Unassigned);
            auto extractor = fid::make_extractor(c.fid.extractor, c.fid.extractor_seed);
            const fid::FeatureStats real_stats =
                fid::stats_from_files(real, *extractor, c.fid.batch_size);
            const fid::FeatureStats fake_stats =
                fid::stats_from_directory(c.samples_dir(), *extractor, c.fid.batch_size);
            const fid::FrechetResult fr =
                fid::frechet_distance_full(real_stats, fake_stats, c.fid.eps_stab);
            fid::FidReport fr_report;
            fr_report.fid = fr.distance;
            fr_report.stabilized = fr.stabilized;
            fr_report.applied_eps = fr.applied_eps;
            fr_report.n_real = real_stats.count();
            fr_report.n_fake = fake_stats.count();
            fr_report.d = real_stats.dim();
            fr_report.extractor_id = extractor->identity();
            fr_report.config.eps_stab = c.fid.eps_stab;
            fr_report.config.batch_size = c.fid.batch_size;
            std::ofstream os(c.fid_report_path());
            os << fr_report.to_json().dump(2) << '\n';
            report.artifacts = {c.fid_report_path()};
            report.extra = fr_report.to_json();
            break;
        }
    }
    report.ok = true;
    return report;
}

}  // namespace

StageReport run_stage(Stage stage, const PipelineConfig& config) {
    config.validate();
    fs::create_directories(config.paths.run_dir);
    config.save_snapshot(config.snapshot_path());

    const auto t0 = std::chrono::steady_clock::now();
    StageReport report;
    try {
        report = execute(stage, config);
    } catch (const std::exception& e) {
        report.stage = to_string(stage);
        report.ok = false;
        report.error = e.what();
    }
    report.duration_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

    const std::string rp = config.stage_report_path(report.stage);
    const fs::path rpp(rp);
    if (rpp.has_parent_path()) fs::create_directories(rpp.parent_path());
    std::ofstream os(rp);
    os << report.to_json().dump(2) << '\n';
    return report;
}

std::vector<StageReport> run_pipeline(const std::vector<Stage>& stages,
                                      const PipelineConfig& config) {
    std::vector<StageReport> reports;
    for (Stage s : stages) {
        reports.push_back(run_stage(s, config));
        if (!reports.back().ok) break;
    }
    return reports;
}

json token_length_study(const std::vector<int>& budgets, const PipelineConfig& base,
                        const std::string& report_path) {
    json rows = json::array();
    for (const int budget : budgets) {
        json row{{"token_budget", budget}};
        try {
            PipelineConfig c = base;
            c.summarize.budget = budget;
            c.textcond.n_windows = base.n_windows_for_budget(budget);
            c.paths.run_dir = base.paths.run_dir + "/study/b" + std::to_string(budget);
            fs::create_directories(c.paths.run_dir);
            row["context_len"] = c.textcond.context_len();

            // shared corpus + VAE come from the base run; manifest image
            // paths are manifest-relative, so rebase them into the study dir
            require_artifact(base.manifest_path(), "manifest", "corpus-build");
            require_artifact(base.vae_checkpoint_path(), "VAE checkpoint", "train-vae");
            const corpus::Manifest base_manifest = corpus::load_manifest(base.manifest_path());
            corpus::save_manifest(
                c.manifest_path(),
                corpus::rebase_manifest(base_manifest, base.paths.run_dir, c.paths.run_dir));
            if (fs::exists(base.split_path())) {
                fs::copy_file(base.split_path(), c.split_path(),
                              fs::copy_options::overwrite_existing);
            }
            fs::copy_file(base.vae_checkpoint_path(), c.vae_checkpoint_path(),
                          fs::copy_options::overwrite_existing);

            for (const Stage s : {Stage::Summarize, Stage::TrainLdm, Stage::Sample, Stage::Fid}) {
                const StageReport r = run_stage(s, c);
                if (!r.ok) throw Error("stage " + r.stage + " failed: " + r.error);
                if (s == Stage::TrainLdm) {
                    row["peak_mem_bytes"] = r.extra.at("peak_mem_bytes");
                    row["final_loss"] = r.extra.at("final_smoothed_loss");
                }
                if (s == Stage::Fid) row["fid"] = r.extra.at("fid");
            }
        } catch (const std::exception& e) {
            row["error"] = e.what();
        }
        rows.push_back(row);
    }
    json report{{"columns", {"token_budget", "fid", "peak_mem_bytes"}}, {"rows", rows}};
    if (!report_path.empty()) {
        const fs::path rp(report_path);
        if (rp.has_parent_path()) fs::create_directories(rp.parent_path());
        std::ofstream os(report_path);
        os << report.dump(2) << '\n';
    }
    return report;
}

}  // namespace histogen::pipeline
