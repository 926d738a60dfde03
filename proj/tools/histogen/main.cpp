#include <CLI11.hpp>

#include <iostream>

#include "histogen/core/image.hpp"
#include "histogen/fid/score.hpp"
#include "histogen/pipeline/datagen.hpp"
#include "histogen/pipeline/stages.hpp"
#include "histogen/sample/generate.hpp"
#include "histogen/vae/train.hpp"

namespace hp = histogen::pipeline;

namespace {

int report_outcome(const hp::StageReport& r) {
    if (r.ok) {
        std::cout << "[ok] " << r.stage << " (" << static_cast<long>(r.duration_ms) << " ms)";
        for (const auto& a : r.artifacts) std::cout << "\n  -> " << a;
        std::cout << "\n";
        return 0;
    }
    std::cerr << "[failed] " << r.stage << ": " << r.error << "\n";
    return 1;
}

hp::PipelineConfig load_config(const std::string& path) {
    if (path.empty()) {
        hp::PipelineConfig c;
        c.apply_env_overrides();
        return c;
    }
    return hp::PipelineConfig::from_file(path);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"histogen: text-conditioned latent diffusion for histopathology patches"};
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("--config", config_path, "pipeline YAML config")->envname("HISTOGEN_CONFIG");

    // ---- corpus ----
    auto* corpus_cmd = app.add_subcommand("corpus", "manifest building and split assignment");
    corpus_cmd->require_subcommand(1);

    auto* corpus_build = corpus_cmd->add_subcommand("build", "scan images and join tables");
    std::string cb_images, cb_reports, cb_scores, cb_out;
    corpus_build->add_option("--images", cb_images, "patch image directory");
    corpus_build->add_option("--reports", cb_reports, "reports JSONL");
    corpus_build->add_option("--scores", cb_scores, "scores JSONL");
    corpus_build->add_option("--out", cb_out, "output manifest path");

    auto* corpus_split = corpus_cmd->add_subcommand("split", "seeded grouped train/test split");
    std::uint64_t cs_seed = 0;
    double cs_fraction = 0.2;
    std::string cs_group = "by_case";
    bool cs_seed_set = false, cs_fraction_set = false, cs_group_set = false;
    corpus_split->add_option("--seed", cs_seed)->each([&](const std::string&) { cs_seed_set = true; });
    corpus_split->add_option("--test-fraction", cs_fraction)->each([&](const std::string&) {
        cs_fraction_set = true;
    });
    corpus_split->add_option("--group-by", cs_group, "by_case|by_patch")
        ->each([&](const std::string&) { cs_group_set = true; });

    // ---- summarize ----
    auto* summarize_cmd =
        app.add_subcommand("summarize", "token-budgeted report summarization with retries");
    int sm_budget = 0, sm_retries = -1;
    std::string sm_model, sm_mock;
    bool sm_truncate = false;
    summarize_cmd->add_option("--budget", sm_budget, "summary token budget (20|35|50|150|N)");
    summarize_cmd->add_option("--model", sm_model, "completion model id");
    summarize_cmd->add_option("--max-retries", sm_retries, "regeneration attempts");
    summarize_cmd->add_option("--mock", sm_mock, "scripted mock client JSON");
    summarize_cmd->add_flag("--truncate", sm_truncate, "truncate instead of failing");

    // ---- vae ----
    auto* vae_cmd = app.add_subcommand("vae", "KL autoencoder");
    vae_cmd->require_subcommand(1);
    auto* vae_train_cmd = vae_cmd->add_subcommand("train", "train the autoencoder");
    auto* vae_rec = vae_cmd->add_subcommand("reconstruct", "encode+decode images");
    std::string vr_ckpt, vr_in, vr_out;
    vae_rec->add_option("--checkpoint", vr_ckpt)->required();
    vae_rec->add_option("--in", vr_in, "input PNG")->required();
    vae_rec->add_option("--out", vr_out, "output PNG")->required();

    // ---- train-ldm ----
    auto* ldm_cmd = app.add_subcommand("train-ldm", "latent diffusion training");
    std::string ldm_precision;
    long ldm_iters = 0;
    ldm_cmd->add_option("--precision", ldm_precision, "full32|mixed16");
    ldm_cmd->add_option("--iterations", ldm_iters, "override max_iterations");

    // ---- sample ----
    auto* sample_cmd = app.add_subcommand("sample", "DDIM generation with guidance");
    std::string sp_captions, sp_out, sp_ldm, sp_vae, sp_vocab;
    int sp_steps = 0, sp_count = 0;
    double sp_scale = -1, sp_eta = -1;
    std::uint64_t sp_seed = 0;
    bool sp_seed_set = false;
    sample_cmd->add_option("--captions", sp_captions, "captioned manifest (JSONL)");
    sample_cmd->add_option("--steps", sp_steps, "DDIM steps");
    sample_cmd->add_option("--scale", sp_scale, "guidance scale");
    sample_cmd->add_option("--eta", sp_eta, "DDIM eta");
    sample_cmd->add_option("--seed", sp_seed)->each([&](const std::string&) { sp_seed_set = true; });
    sample_cmd->add_option("--out", sp_out, "output directory");
    sample_cmd->add_option("--ldm", sp_ldm, "LDM checkpoint");
    sample_cmd->add_option("--vae", sp_vae, "VAE checkpoint");
    sample_cmd->add_option("--vocab", sp_vocab, "tokenizer vocabulary");
    sample_cmd->add_option("--count", sp_count, "max captions");
    std::string sp_spacing;
    sample_cmd->add_option("--spacing", sp_spacing, "uniform|quadratic timestep plan");

    // ---- fid ----
    auto* fid_cmd = app.add_subcommand("fid", "Frechet distance between image sets");
    std::string fd_real, fd_fake, fd_extractor = "toy", fd_out, fd_save_stats;
    std::uint64_t fd_seed = 17;
    double fd_eps = 1e-6;
    fid_cmd->add_option("--real", fd_real, "real image dir or stats cache")->required();
    fid_cmd->add_option("--fake", fd_fake, "generated image dir")->required();
    fid_cmd->add_option("--extractor", fd_extractor, "toy|inception");
    fid_cmd->add_option("--extractor-seed", fd_seed);
    fid_cmd->add_option("--eps-stab", fd_eps, "stabilization epsilon");
    fid_cmd->add_option("--out", fd_out, "report JSON path");
    fid_cmd->add_option("--save-real-stats", fd_save_stats, "cache real-side stats here");

    // ---- study ----
    auto* study_cmd = app.add_subcommand("study", "token-length study (summarize/train/sample/fid per budget)");
    std::vector<int> st_budgets{20, 35, 50, 150};
    std::string st_out;
    study_cmd->add_option("--budgets", st_budgets, "summary token budgets")->delimiter(',');
    study_cmd->add_option("--out", st_out, "report JSON path");

    // ---- pipeline ----
    auto* pipe_cmd = app.add_subcommand("pipeline", "staged execution");
    auto* pipe_run = pipe_cmd->add_subcommand("run", "run stages in order");
    std::vector<std::string> pr_stages;
    pipe_run->add_option("--stages", pr_stages, "comma/space separated stage names")
        ->delimiter(',');

    // ---- datagen ----
    auto* datagen_cmd = app.add_subcommand("datagen", "synthetic two-class textured dataset");
    hp::DatagenOptions dg;
    datagen_cmd->add_option("--out", dg.out_dir, "output directory")->required();
    datagen_cmd->add_option("--cases", dg.n_cases);
    datagen_cmd->add_option("--patches-per-case", dg.patches_per_case);
    datagen_cmd->add_option("--size", dg.image_size);
    datagen_cmd->add_option("--seed", dg.seed);

    CLI11_PARSE(app, argc, argv);

    try {
        if (datagen_cmd->parsed()) {
            hp::generate_toy_dataset(dg);
            std::cout << "[ok] datagen -> " << dg.out_dir << "\n";
            return 0;
        }

        hp::PipelineConfig cfg = load_config(config_path);

        if (corpus_build->parsed()) {
            if (!cb_images.empty()) cfg.paths.images = cb_images;
            if (!cb_reports.empty()) cfg.paths.reports = cb_reports;
            if (!cb_scores.empty()) cfg.paths.scores = cb_scores;
            if (!cb_out.empty()) {
                // manifest lives inside run_dir; honor an explicit path by
                // rebasing the run directory
                const std::filesystem::path p(cb_out);
                if (p.has_parent_path()) cfg.paths.run_dir = p.parent_path().string();
            }
            return report_outcome(hp::run_stage(hp::Stage::CorpusBuild, cfg));
        }
        if (corpus_split->parsed()) {
            if (cs_seed_set) cfg.seed = cs_seed;
            if (cs_fraction_set) cfg.corpus.test_fraction = cs_fraction;
            if (cs_group_set) cfg.corpus.grouping = histogen::corpus::grouping_from_string(cs_group);
            return report_outcome(hp::run_stage(hp::Stage::CorpusSplit, cfg));
        }
        if (summarize_cmd->parsed()) {
            if (sm_budget > 0) cfg.summarize.budget = sm_budget;
            if (!sm_model.empty()) cfg.summarize.model = sm_model;
            if (sm_retries >= 0) cfg.summarize.max_retries = sm_retries;
            if (!sm_mock.empty()) cfg.summarize.mock_script = sm_mock;
            if (sm_truncate) cfg.summarize.truncate = true;
            return report_outcome(hp::run_stage(hp::Stage::Summarize, cfg));
        }
        if (vae_train_cmd->parsed()) {
            return report_outcome(hp::run_stage(hp::Stage::TrainVae, cfg));
        }
        if (vae_rec->parsed()) {
            auto loaded = histogen::vae::load_vae_checkpoint(vr_ckpt);
            const histogen::Tensor<float> img = histogen::load_image_batch({vr_in});
            auto post = loaded.model->encode(img);
            const histogen::Tensor<float> rec = loaded.model->decode(post.mean);
            histogen::Tensor<float> one({3, rec.dim(2), rec.dim(3)});
            std::copy(rec.data(), rec.data() + rec.size(), one.data());
            histogen::write_png(vr_out, histogen::tensor_to_image(one));
            std::cout << "[ok] reconstruct -> " << vr_out << "\n";
            return 0;
        }
        if (ldm_cmd->parsed()) {
            if (!ldm_precision.empty()) cfg.train.precision = ldm_precision;
            if (ldm_iters > 0) cfg.train.max_iterations = ldm_iters;
            return report_outcome(hp::run_stage(hp::Stage::TrainLdm, cfg));
        }
        if (sample_cmd->parsed()) {
            if (sp_steps > 0) cfg.sampler.steps = sp_steps;
            if (sp_scale >= 0) cfg.sampler.guidance_scale = sp_scale;
            if (sp_eta >= 0) cfg.sampler.eta = sp_eta;
            if (sp_count > 0) cfg.sampler.count = sp_count;
            if (!sp_spacing.empty()) cfg.sampler.spacing = sp_spacing;
            if (!sp_captions.empty() || !sp_out.empty() || !sp_ldm.empty()) {
                // fully explicit invocation, bypassing the run-dir layout
                histogen::sample::GenerateOptions opt;
                opt.sampler.n_steps = cfg.sampler.steps;
                opt.sampler.eta = cfg.sampler.eta;
                opt.sampler.guidance_scale = cfg.sampler.guidance_scale;
                opt.sampler.seed = sp_seed_set ? sp_seed : histogen::derive_seed(cfg.seed, "sample");
                opt.sampler.batch_size = cfg.sampler.batch_size;
                opt.sampler.spacing = histogen::sample::spacing_from_string(cfg.sampler.spacing);
                opt.ldm_checkpoint = sp_ldm.empty() ? cfg.ldm_checkpoint_path() : sp_ldm;
                opt.vae_checkpoint = sp_vae.empty() ? cfg.vae_checkpoint_path() : sp_vae;
                opt.vocab_path = sp_vocab.empty() ? cfg.paths.vocab : sp_vocab;
                opt.out_dir = sp_out.empty() ? cfg.samples_dir() : sp_out;
                opt.max_captions = cfg.sampler.count;
                const std::string captions =
                    sp_captions.empty() ? cfg.captioned_manifest_path() : sp_captions;
                const auto manifest = histogen::corpus::load_manifest(captions);
                std::vector<histogen::corpus::PatchRecord> rows;
                for (const auto& r : manifest.records) {
                    if (r.split != histogen::corpus::Split::Train) rows.push_back(r);
                }
                if (rows.empty()) rows = manifest.records;
                const auto res = histogen::sample::generate(rows, opt);
                std::cout << "[ok] sample: " << res.n_images << " images -> " << opt.out_dir
                          << "\n";
                return 0;
            }
            if (sp_seed_set) cfg.seed = sp_seed;
            return report_outcome(hp::run_stage(hp::Stage::Sample, cfg));
        }
        if (fid_cmd->parsed()) {
            auto extractor = histogen::fid::make_extractor(fd_extractor, fd_seed);
            histogen::fid::ScoreConfig sc;
            sc.eps_stab = fd_eps;
            sc.batch_size = cfg.fid.batch_size;
            const auto report =
                histogen::fid::score(fd_real, fd_fake, *extractor, sc, fd_save_stats);
            const std::string out = report.to_json().dump(2);
            if (!fd_out.empty()) {
                std::ofstream os(fd_out);
                os << out << '\n';
            }
            std::cout << out << "\n";
            return 0;
        }
        if (study_cmd->parsed()) {
            const std::string out =
                st_out.empty() ? cfg.paths.run_dir + "/study/report.json" : st_out;
            const auto report = hp::token_length_study(st_budgets, cfg, out);
            std::cout << report.dump(2) << "\n";
            for (const auto& row : report.at("rows")) {
                if (row.contains("error")) return 1;
            }
            return 0;
        }
        if (pipe_run->parsed()) {
            std::vector<hp::Stage> stages;
            for (const auto& s : pr_stages) stages.push_back(hp::stage_from_string(s));
            if (stages.empty()) {
                stages = {hp::Stage::CorpusBuild, hp::Stage::CorpusSplit, hp::Stage::Summarize,
                          hp::Stage::TrainVae,    hp::Stage::TrainLdm,    hp::Stage::Sample,
                          hp::Stage::Fid};
            }
            int rc = 0;
            for (const auto& r : hp::run_pipeline(stages, cfg)) {
                rc |= report_outcome(r);
            }
            return rc;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    std::cerr << "no subcommand executed\n";
    return 1;
}
