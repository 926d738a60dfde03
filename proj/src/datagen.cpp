#include "histogen/pipeline/datagen.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "histogen/core/image.hpp"
#include "histogen/core/rng.hpp"

namespace histogen::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Palette {
    double bg[3];  // eosin-like pink
    double fg[3];  // hematoxylin-like purple
};

Palette jittered_palette(Rng& rng) {
    Palette p{{0.86, 0.62, 0.70}, {-0.15, -0.45, 0.05}};
    for (int c = 0; c < 3; ++c) {
        p.bg[c] += rng.uniform(-0.06, 0.06);
        p.fg[c] += rng.uniform(-0.06, 0.06);
    }
    return p;
}

// Striped fibrous texture (low-tumour look).
void paint_stripes(Tensor<float>& img, Rng& rng, bool dense) {
    const Index Hh = img.dim(1), W = img.dim(2);
    const Palette pal = jittered_palette(rng);
    const double theta = rng.uniform(0, M_PI);
    const double freq = (dense ? 0.9 : 0.45) + rng.uniform(-0.08, 0.08);
    const double phase = rng.uniform(0, 2 * M_PI);
    const double ct = std::cos(theta), st = std::sin(theta);
    for (Index y = 0; y < Hh; ++y) {
        for (Index x = 0; x < W; ++x) {
            const double s = std::sin(freq * (ct * x + st * y) + phase);
            const double mix = 0.5 + 0.5 * std::tanh(3.0 * s);
            for (Index c = 0; c < 3; ++c) {
                const double v = mix * pal.bg[c] + (1 - mix) * pal.fg[c];
                img(0, c, y, x) = static_cast<float>(v + rng.uniform(-0.03, 0.03));
            }
        }
    }
}

// Nested blob texture (high-tumour look).
void paint_blobs(Tensor<float>& img, Rng& rng, bool dense) {
    const Index Hh = img.dim(1), W = img.dim(2);
    const Palette pal = jittered_palette(rng);
    for (Index y = 0; y < Hh; ++y) {
        for (Index x = 0; x < W; ++x) {
            for (Index c = 0; c < 3; ++c) {
                img(0, c, y, x) = static_cast<float>(pal.bg[c] + rng.uniform(-0.03, 0.03));
            }
        }
    }
    const int n_blobs = (dense ? 14 : 7) + static_cast<int>(rng.uniform_index(4));
    for (int k = 0; k < n_blobs; ++k) {
        const double cy = rng.uniform(0, static_cast<double>(Hh));
        const double cx = rng.uniform(0, static_cast<double>(W));
        const double r = rng.uniform(1.5, 3.5);
        for (Index y = 0; y < Hh; ++y) {
            for (Index x = 0; x < W; ++x) {
                const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
                const double w = std::exp(-d2 / (2 * r * r));
                if (w < 0.05) continue;
                for (Index c = 0; c < 3; ++c) {
                    const double cur = img(0, c, y, x);
                    img(0, c, y, x) = static_cast<float>((1 - w) * cur + w * pal.fg[c]);
                }
            }
        }
    }
}

std::string report_for(bool tumor_high, int case_idx) {
    std::string head = tumor_high
        ? "The specimen shows nests and sheets of crowded atypical cells with enlarged "
          "hyperchromatic nuclei replacing much of the sampled stroma. "
        : "The specimen shows bands of spindled fibrous stroma arranged in parallel fascicles "
          "with scattered bland cells and no confluent cellular nests. ";
    return "Case " + std::to_string(case_idx) +
           ". Received labeled specimen, sectioned and entirely submitted. " + head +
           "Margins are described in the gross description. Clinical history and prior "
           "procedures were reviewed. Additional levels were examined with consistent findings.";
}

std::string summary_for(bool tumor_high) {
    return tumor_high ? "dense nests of crowded atypical purple cells in pink stroma."
                      : "parallel striped fibrous stroma with scattered bland cells.";
}

}  // namespace

void generate_toy_dataset(const DatagenOptions& opt) {
    if (opt.out_dir.empty()) throw ConfigError("datagen: out_dir required");
    const fs::path root(opt.out_dir);
    fs::create_directories(root / "images");

    std::ofstream reports(root / "reports.jsonl", std::ios::trunc);
    std::ofstream scores(root / "scores.jsonl", std::ios::trunc);
    json mock = json::object();

    for (int ci = 0; ci < opt.n_cases; ++ci) {
        Rng case_rng = Rng::substream(opt.seed, "datagen-case", static_cast<std::uint64_t>(ci));
        const bool tumor_high = ci % 2 == 1;  // balanced classes
        char case_id[16];
        std::snprintf(case_id, sizeof(case_id), "case-%03d", ci);

        reports << json{{"case_id", case_id}, {"report_text", report_for(tumor_high, ci)}}.dump()
                << '\n';
        mock[case_id] = json::array({summary_for(tumor_high)});

        for (int pi = 0; pi < opt.patches_per_case; ++pi) {
            const bool til_high = case_rng.uniform() < 0.5;
            Tensor<float> img({1, 3, opt.image_size, opt.image_size});
            if (tumor_high) {
                paint_blobs(img, case_rng, til_high);
            } else {
                paint_stripes(img, case_rng, til_high);
            }
            // map [0,1]-ish paint values into [-1,1]
            for (Index i = 0; i < img.size(); ++i) {
                img[i] = std::clamp(2.0f * img[i] - 1.0f, -1.0f, 1.0f);
            }
            char patch_id[32];
            std::snprintf(patch_id, sizeof(patch_id), "%s__p%03d", case_id, pi);
            Tensor<float> chw({3, opt.image_size, opt.image_size});
            std::copy(img.data(), img.data() + img.size(), chw.data());
            write_png((root / "images" / (std::string(patch_id) + ".png")).string(),
                      tensor_to_image(chw));
            scores << json{{"patch_id", patch_id},
                           {"case_id", case_id},
                           {"tumor", tumor_high ? "High" : "Low"},
                           {"til", til_high ? "High" : "Low"}}
                          .dump()
                   << '\n';
        }
    }
    std::ofstream ms(root / "mock_responses.json", std::ios::trunc);
    ms << mock.dump(2) << '\n';
}

void generate_noise_images(const std::string& out_dir, int count, Index image_size,
                           std::uint64_t seed) {
    fs::create_directories(out_dir);
    Rng rng(derive_seed(seed, "noise-images"));
    for (int i = 0; i < count; ++i) {
        ImageU8 img;
        img.width = static_cast<int>(image_size);
        img.height = static_cast<int>(image_size);
        img.rgb.resize(static_cast<std::size_t>(image_size) * image_size * 3);
        for (auto& b : img.rgb) b = static_cast<std::uint8_t>(rng.uniform_index(256));
        char name[32];
        std::snprintf(name, sizeof(name), "noise-%05d.png", i);
        write_png(out_dir + "/" + name, img);
    }
}

}  // namespace histogen::pipeline
