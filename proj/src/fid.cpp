#include "histogen/fid/score.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "histogen/core/image.hpp"

namespace histogen::fid {

namespace fs = std::filesystem;
using nlohmann::json;

ToyConvExtractor::ToyConvExtractor(std::uint64_t seed) : seed_(seed) {
    Rng rng(derive_seed(seed, "toy-extractor"));
    conv1_ = nn::Conv2d<float>(3, 16, 3, 2, 1, rng, nullptr);
    conv2_ = nn::Conv2d<float>(16, 32, 3, 2, 1, rng, nullptr);
    conv3_ = nn::Conv2d<float>(32, 64, 3, 2, 1, rng, nullptr);
}

std::string ToyConvExtractor::identity() const {
    return "toy-conv(seed=" + std::to_string(seed_) + ",d=64)";
}

Eigen::MatrixXd ToyConvExtractor::extract(const Tensor<float>& images) {
    if (images.rank() != 4 || images.dim(1) != 3) {
        throw ShapeError("extract: expected (B,3,H,W), got " + images.shape_str());
    }
    auto act = [](Tensor<float>& t) { t.arr() = t.arr().tanh(); };
    Tensor<float> h = conv1_.forward(images);
    act(h);
    h = conv2_.forward(h);
    act(h);
    h = conv3_.forward(h);
    act(h);

    const Index B = h.dim(0), C = h.dim(1), HW = h.dim(2) * h.dim(3);
    Eigen::MatrixXd feats(B, C);
    for (Index b = 0; b < B; ++b) {
        for (Index c = 0; c < C; ++c) {
            const float* src = h.data() + (b * C + c) * HW;
            double s = 0;
            for (Index p = 0; p < HW; ++p) s += static_cast<double>(src[p]);
            feats(b, c) = s / static_cast<double>(HW);
        }
    }
    return feats;
}

std::unique_ptr<FeatureExtractor> make_extractor(const std::string& name, std::uint64_t seed) {
    if (name == "toy") return std::make_unique<ToyConvExtractor>(seed);
    if (name == "inception") {
        throw ConfigError(
            "extractor 'inception' needs external pretrained weights which are not bundled; "
            "use --extractor toy, or plug an Inception feature extractor behind "
            "fid::FeatureExtractor for literature-comparable absolute scores");
    }
    throw ConfigError("unknown extractor '" + name + "' (available: toy, inception)");
}

FeatureStats stats_from_directory(const std::string& dir, FeatureExtractor& extractor,
                                  Index batch_size) {
    if (!fs::is_directory(dir)) throw IoError("image directory not found: " + dir);
    std::vector<std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".png") {
            files.push_back(e.path().string());
        }
    }
    std::sort(files.begin(), files.end());
    if (files.size() < 2) {
        throw ConfigError("need at least 2 images for statistics, found " +
                          std::to_string(files.size()) + " in " + dir);
    }
    return stats_from_files(files, extractor, batch_size);
}

FeatureStats stats_from_files(const std::vector<std::string>& files, FeatureExtractor& extractor,
                              Index batch_size) {
    if (files.size() < 2) {
        throw ConfigError("need at least 2 images for statistics, got " +
                          std::to_string(files.size()));
    }
    std::vector<std::string> unreadable;
    FeatureStats stats(extractor.dim());
    std::vector<std::string> batch;
    auto flush = [&]() {
        if (batch.empty()) return;
        stats.accumulate(extractor.extract(load_image_batch(batch)));
        batch.clear();
    };
    for (const auto& f : files) {
        if (!is_readable_png(f)) {
            unreadable.push_back(f);
            continue;
        }
        batch.push_back(f);
        if (static_cast<Index>(batch.size()) == batch_size) flush();
    }
    flush();
    if (!unreadable.empty()) {
        std::string msg = "unreadable images:";
        for (const auto& f : unreadable) msg += " " + f;
        throw IoError(msg);
    }
    return stats;
}

namespace {
constexpr char kStatsMagic[8] = {'H', 'G', 'F', 'I', 'D', 'S', 'T', '1'};

void write_doubles(std::ostream& os, const double* p, std::size_t n) {
    os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
}
}  // namespace

void save_stats(const std::string& path, const FeatureStats& stats,
                const std::string& extractor_id) {
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write stats cache: " + path);
    os.write(kStatsMagic, 8);
    json header{{"version", 1},
                {"n", stats.count()},
                {"d", stats.dim()},
                {"extractor_id", extractor_id}};
    const std::string hs = header.dump();
    const std::uint64_t len = hs.size();
    os.write(reinterpret_cast<const char*>(&len), 8);
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    write_doubles(os, stats.mean().data(), static_cast<std::size_t>(stats.dim()));
    const Eigen::MatrixXd cov = stats.covariance();
    write_doubles(os, cov.data(), static_cast<std::size_t>(stats.dim() * stats.dim()));
    if (!os) throw IoError("short write on stats cache: " + path);
}

std::pair<FeatureStats, std::string> load_stats(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read stats cache: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kStatsMagic, 8) != 0) {
        throw IoError("not a stats cache file: " + path);
    }
    std::uint64_t len = 0;
    is.read(reinterpret_cast<char*>(&len), 8);
    std::string hs(len, '\0');
    is.read(hs.data(), static_cast<std::streamsize>(len));
    json header = json::parse(hs);
    if (header.at("version").get<int>() != 1) throw IoError("unsupported stats cache version");
    const auto d = header.at("d").get<Eigen::Index>();
    const auto n = header.at("n").get<std::int64_t>();
    Eigen::VectorXd mean(d);
    Eigen::MatrixXd cov(d, d);
    is.read(reinterpret_cast<char*>(mean.data()), static_cast<std::streamsize>(d * 8));
    is.read(reinterpret_cast<char*>(cov.data()), static_cast<std::streamsize>(d * d * 8));
    if (!is) throw IoError("truncated stats cache: " + path);
    return {FeatureStats::from_raw(d, n, std::move(mean), cov * static_cast<double>(n - 1)),
            header.at("extractor_id").get<std::string>()};
}

namespace {

bool is_stats_file(const std::string& path) {
    if (!fs::is_regular_file(path)) return false;
    std::ifstream is(path, std::ios::binary);
    char magic[8];
    is.read(magic, 8);
    return is && std::memcmp(magic, kStatsMagic, 8) == 0;
}

}  // namespace

json FidReport::to_json() const {
    return {{"fid", fid},
            {"n_real", n_real},
            {"n_fake", n_fake},
            {"d", d},
            {"extractor_id", extractor_id},
            {"stabilized", stabilized},
            {"applied_eps", applied_eps},
            {"real_stats_cached", real_stats_cached},
            {"config", {{"eps_stab", config.eps_stab}, {"batch_size", config.batch_size}}}};
}

FidReport score(const std::string& real_path, const std::string& fake_dir,
                FeatureExtractor& extractor, const ScoreConfig& config,
                const std::string& save_real_stats_path) {
    FidReport report;
    report.extractor_id = extractor.identity();
    report.config = config;

    FeatureStats real_stats;
    if (is_stats_file(real_path)) {
        auto [stats, id] = load_stats(real_path);
        if (id != extractor.identity()) {
            throw ConfigError("stats cache was computed with extractor '" + id +
                              "', current extractor is '" + extractor.identity() + "'");
        }
        real_stats = std::move(stats);
        report.real_stats_cached = true;
    } else {
        real_stats = stats_from_directory(real_path, extractor, config.batch_size);
        if (!save_real_stats_path.empty()) {
            save_stats(save_real_stats_path, real_stats, extractor.identity());
        }
    }
    const FeatureStats fake_stats = stats_from_directory(fake_dir, extractor, config.batch_size);

    const FrechetResult fr = frechet_distance_full(real_stats, fake_stats, config.eps_stab);
    report.fid = fr.distance;
    report.stabilized = fr.stabilized;
    report.applied_eps = fr.applied_eps;
    report.n_real = real_stats.count();
    report.n_fake = fake_stats.count();
    report.d = real_stats.dim();
    return report;
}

}  // namespace histogen::fid
