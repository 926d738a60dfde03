#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "histogen/core/image.hpp"
#include "histogen/fid/score.hpp"
#include "oracles.hpp"

using namespace histogen;
using namespace histogen::fid;
namespace fs = std::filesystem;

namespace {

Eigen::MatrixXd random_features(Index n, Index d, std::uint64_t seed, double spread = 1.0) {
    Rng rng(seed);
    Eigen::MatrixXd m(n, d);
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < d; ++j) m(i, j) = spread * rng.normal() + 0.1 * j;
    }
    return m;
}

Eigen::MatrixXd random_spd(Index d, std::uint64_t seed) {
    Rng rng(seed);
    Eigen::MatrixXd a(d, d);
    for (Index i = 0; i < d; ++i) {
        for (Index j = 0; j < d; ++j) a(i, j) = rng.normal();
    }
    Eigen::MatrixXd spd = a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(d, d);
    return spd;
}

FeatureStats stats_of(const Eigen::MatrixXd& rows) {
    FeatureStats s(rows.cols());
    s.accumulate(rows);
    return s;
}

// writes noisy variants of base images into dir
void write_images(const std::string& dir, int n, std::uint64_t seed, double noise_level) {
    fs::create_directories(dir);
    Rng rng(seed);
    for (int k = 0; k < n; ++k) {
        ImageU8 img;
        img.width = img.height = 16;
        img.rgb.resize(16 * 16 * 3);
        const double phase = rng.uniform(0, 6.28);
        const double freq = 0.5 + 0.2 * rng.uniform();
        for (int y = 0; y < 16; ++y) {
            for (int x = 0; x < 16; ++x) {
                const double v = 0.5 + 0.4 * std::sin(freq * (x + 2 * y) + phase);
                for (int c = 0; c < 3; ++c) {
                    double out = v * (c == 0 ? 1.0 : 0.7) + noise_level * rng.normal();
                    out = std::clamp(out, 0.0, 1.0);
                    img.rgb[static_cast<std::size_t>((y * 16 + x) * 3 + c)] =
                        static_cast<std::uint8_t>(std::lround(out * 255));
                }
            }
        }
        write_png(dir + "/img-" + std::to_string(k) + ".png", img);
    }
}

}  // namespace

TEST_CASE("streaming stats equal dense recomputation; split order irrelevant") {
    const Eigen::MatrixXd all = random_features(100, 6, 1);
    const auto dense = oracles::dense_stats(all);

    // accumulate twice (60/40) == accumulate once (100)
    FeatureStats split6040(6);
    split6040.accumulate(all.topRows(60));
    split6040.accumulate(all.bottomRows(40));
    const FeatureStats once = stats_of(all);
    CHECK(once.count() == 100);
    CHECK((split6040.mean() - dense.mean).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((split6040.covariance() - dense.cov).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((once.covariance() - split6040.covariance()).cwiseAbs().maxCoeff() < 1e-12);

    // random shardings, arbitrary merge trees: within 1e-10 relative
    Rng rng(2);
    for (int trial = 0; trial < 25; ++trial) {
        std::vector<FeatureStats> shards;
        Index row = 0;
        while (row < all.rows()) {
            const Index take = 1 + static_cast<Index>(rng.uniform_index(17));
            const Index n = std::min(take, all.rows() - row);
            shards.push_back(stats_of(all.middleRows(row, n)));
            row += n;
        }
        rng.shuffle(shards.begin(), shards.end());
        while (shards.size() > 1) {  // random tree order
            const std::size_t i = rng.uniform_index(shards.size() - 1);
            shards[i].merge(shards[i + 1]);
            shards.erase(shards.begin() + static_cast<std::ptrdiff_t>(i + 1));
        }
        const double scale = dense.cov.cwiseAbs().maxCoeff();
        CHECK((shards[0].mean() - dense.mean).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((shards[0].covariance() - dense.cov).cwiseAbs().maxCoeff() / scale < 1e-10);
    }
}

TEST_CASE("stats edge cases: single point, zero variance, dimension checks") {
    FeatureStats s(3);
    CHECK_FALSE(s.covariance_valid());
    Eigen::MatrixXd one(1, 3);
    one << 1, 2, 3;
    s.accumulate(one);
    CHECK(s.count() == 1);
    CHECK_FALSE(s.covariance_valid());  // undefined-flagged
    CHECK_THROWS_AS(s.covariance(), ConfigError);

    Eigen::MatrixXd constant = Eigen::MatrixXd::Ones(10, 3);
    FeatureStats z(3);
    z.accumulate(constant);
    CHECK(z.covariance().cwiseAbs().maxCoeff() == 0.0);

    Eigen::MatrixXd wrong(2, 4);
    CHECK_THROWS_AS(s.accumulate(wrong), ConfigError);
    FeatureStats other(4);
    CHECK_THROWS_AS(s.merge(other), ConfigError);
}

TEST_CASE("frechet distance: analytic 1-D cases are exact") {
    // d=1, mu 0 vs 1, sigma^2 = 1 both -> exactly 1.0
    auto make_1d = [](double mu, double var, Index n = 100) {
        // synthesize stats with exact moments
        return FeatureStats::from_raw(1, n, Eigen::VectorXd::Constant(1, mu),
                                      Eigen::MatrixXd::Constant(1, 1, var * double(n - 1)));
    };
    CHECK(frechet_distance(make_1d(0, 1), make_1d(1, 1)) == doctest::Approx(1.0).epsilon(1e-10));
    // d=1, equal means, sigma^2 4 vs 1 -> (2-1)^2 = 1.0
    CHECK(frechet_distance(make_1d(0, 4), make_1d(0, 1)) == doctest::Approx(1.0).epsilon(1e-10));
    // identical stats -> 0
    CHECK(frechet_distance(make_1d(0.3, 2), make_1d(0.3, 2)) < 1e-10);
}

TEST_CASE("frechet distance: pseudo-metric properties and oracle agreement") {
    for (int trial = 0; trial < 10; ++trial) {
        const Eigen::MatrixXd ra = random_features(80, 5, 100 + trial, 1.0);
        const Eigen::MatrixXd rb = random_features(90, 5, 200 + trial, 1.4);
        const FeatureStats a = stats_of(ra), b = stats_of(rb);

        const double dab = frechet_distance(a, b);
        const double dba = frechet_distance(b, a);
        CHECK(dab >= 0);
        CHECK(std::abs(dab - dba) < 1e-8);
        CHECK(frechet_distance(a, a) < 1e-10);

        const auto da = oracles::dense_stats(ra);
        const auto db = oracles::dense_stats(rb);
        const double want = oracles::fid_oracle(da.mean, da.cov, db.mean, db.cov);
        CHECK(dab == doctest::Approx(want).epsilon(1e-6));
    }
}

TEST_CASE("sqrtm_product: identities, commuting case, high-precision oracle") {
    const Eigen::MatrixXd I4 = Eigen::MatrixXd::Identity(4, 4);
    const SqrtmResult rI = sqrtm_product(I4, I4);
    CHECK(rI.trace == doctest::Approx(4.0).epsilon(1e-12));
    CHECK_FALSE(rI.stabilized);

    // diagonal commuting case: trace = sum sqrt(a_i b_i)
    Eigen::MatrixXd A = Eigen::Vector4d(1, 4, 9, 16).asDiagonal();
    Eigen::MatrixXd B = Eigen::Vector4d(4, 1, 1, 4).asDiagonal();
    CHECK(sqrtm_product(A, B).trace == doctest::Approx(2 + 2 + 3 + 8).epsilon(1e-12));

    // random SPD pairs vs extended-precision Denman-Beavers
    for (int trial = 0; trial < 8; ++trial) {
        const Eigen::MatrixXd sa = random_spd(6, 300 + trial);
        const Eigen::MatrixXd sb = random_spd(6, 400 + trial);
        const double want = oracles::sqrtm_trace_denman_beavers(sa, sb);
        CHECK(sqrtm_product(sa, sb).trace == doctest::Approx(want).epsilon(1e-8));
    }

    // non-symmetric input is rejected
    Eigen::MatrixXd ns = Eigen::MatrixXd::Zero(3, 3);
    ns(0, 1) = 1.0;
    CHECK_THROWS_AS(sqrtm_product(ns, I4.topLeftCorner(3, 3)), ConfigError);

    // a slightly indefinite input triggers the stabilized retry and reports it
    Eigen::MatrixXd indef = Eigen::Vector3d(1.0, 1.0, -1e-5).asDiagonal();
    const SqrtmResult rs = sqrtm_product(Eigen::MatrixXd::Identity(3, 3), indef, 1e-6);
    CHECK(rs.stabilized);
    CHECK(rs.applied_eps == 1e-6);
    CHECK(std::isfinite(rs.trace));
}

TEST_CASE("score: identical sides ~0, noise ordering, cached stats identical") {
    const auto root = fs::temp_directory_path() / "histogen_fid_dirs";
    fs::remove_all(root);
    const std::string real_dir = (root / "real").string();
    const std::string held_dir = (root / "held").string();
    const std::string noisy1 = (root / "noisy1").string();
    const std::string noisy2 = (root / "noisy2").string();
    write_images(real_dir, 120, 1, 0.02);
    write_images(held_dir, 120, 2, 0.02);   // fresh draw, same distribution
    write_images(noisy1, 120, 3, 0.12);
    write_images(noisy2, 120, 4, 0.30);

    ToyConvExtractor extractor(17);
    ScoreConfig cfg;

    // same directory both sides -> FID < 1e-6
    const FidReport same = score(real_dir, real_dir, extractor, cfg);
    CHECK(same.fid < 1e-6);
    CHECK(same.n_real == 120);
    CHECK(same.extractor_id == extractor.identity());

    // monotone degradation: rising noise cannot lower FID
    const double base = score(real_dir, held_dir, extractor, cfg).fid;
    const double n1 = score(real_dir, noisy1, extractor, cfg).fid;
    const double n2 = score(real_dir, noisy2, extractor, cfg).fid;
    CHECK(n1 > base);
    CHECK(n2 >= n1);

    // cached real-side stats reproduce the same FID to 1e-10
    const std::string stats_path = (root / "real.stats").string();
    const FidReport direct = score(real_dir, held_dir, extractor, cfg, stats_path);
    const FidReport cached = score(stats_path, held_dir, extractor, cfg);
    CHECK(cached.real_stats_cached);
    CHECK(std::abs(cached.fid - direct.fid) < 1e-10);

    // extractor mismatch on the cache is rejected
    ToyConvExtractor other(18);
    CHECK_THROWS_AS(score(stats_path, held_dir, other, cfg), ConfigError);

    // unreadable images are reported by path; empty side errors
    const std::string broken = (root / "broken").string();
    fs::create_directories(broken);
    std::ofstream bad(broken + "/corrupt.png");
    bad << "nope";
    bad.close();
    std::ofstream bad2(broken + "/corrupt2.png");
    bad2 << "nope";
    bad2.close();
    CHECK_THROWS_WITH_AS(score(real_dir, broken, extractor, cfg),
                         doctest::Contains("corrupt.png"), IoError);
    const std::string empty_dir = (root / "empty").string();
    fs::create_directories(empty_dir);
    CHECK_THROWS_AS(score(real_dir, empty_dir, extractor, cfg), ConfigError);
}

TEST_CASE("stats cache round trip: mean bitwise, covariance to roundoff") {
    const Eigen::MatrixXd rows = random_features(50, 8, 9);
    const FeatureStats s = stats_of(rows);
    const auto path = (fs::temp_directory_path() / "histogen_stats_cache.bin").string();
    save_stats(path, s, "toy-test");
    const auto [back, id] = load_stats(path);
    CHECK(id == "toy-test");
    CHECK(back.count() == s.count());
    CHECK((back.mean() - s.mean()).cwiseAbs().maxCoeff() == 0.0);
    // the container stores the unbiased covariance; reconstruction is exact
    // up to one rounding through a multiply/divide pair
    CHECK((back.covariance() - s.covariance()).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("toy extractor is deterministic and pure") {
    ToyConvExtractor a(17), b(17);
    Rng rng(5);
    Tensor<float> imgs({3, 3, 16, 16});
    for (Index i = 0; i < imgs.size(); ++i) imgs[i] = static_cast<float>(std::tanh(rng.normal()));
    const Eigen::MatrixXd fa = a.extract(imgs);
    const Eigen::MatrixXd fb = b.extract(imgs);
    CHECK(fa.rows() == 3);
    CHECK(fa.cols() == 64);
    CHECK((fa - fb).cwiseAbs().maxCoeff() == 0.0);
    const Eigen::MatrixXd fa2 = a.extract(imgs);
    CHECK((fa - fa2).cwiseAbs().maxCoeff() == 0.0);

    CHECK_THROWS_WITH_AS(make_extractor("inception", 0), doctest::Contains("pretrained"),
                         ConfigError);
    CHECK_THROWS_AS(make_extractor("nope", 0), ConfigError);
    CHECK(make_extractor("toy", 17)->identity() == a.identity());
}
