#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "histogen/fid/extractor.hpp"
#include "histogen/fid/frechet.hpp"
#include "histogen/fid/stats.hpp"

namespace histogen::fid {

struct ScoreConfig {
    double eps_stab = 1e-6;
    Index batch_size = 64;
};

struct FidReport {
    double fid = 0;
    std::int64_t n_real = 0;
    std::int64_t n_fake = 0;
    Eigen::Index d = 0;
    std::string extractor_id;
    bool stabilized = false;
    double applied_eps = 0;
    bool real_stats_cached = false;
    ScoreConfig config;

    nlohmann::json to_json() const;
};

// Streams a directory of PNGs through the extractor. Unreadable files are
// collected and reported in one error.
FeatureStats stats_from_directory(const std::string& dir, FeatureExtractor& extractor,
                                  Index batch_size);

// Same, over an explicit file list (split-scoped scoring).
FeatureStats stats_from_files(const std::vector<std::string>& files, FeatureExtractor& extractor,
                              Index batch_size);

// Versioned binary stats cache: {n, mean, cov(m2), d, extractor_id}.
void save_stats(const std::string& path, const FeatureStats& stats,
                const std::string& extractor_id);
std::pair<FeatureStats, std::string> load_stats(const std::string& path);

// real_path: image directory or a stats cache file (detected by content).
FidReport score(const std::string& real_path, const std::string& fake_dir,
                FeatureExtractor& extractor, const ScoreConfig& config,
                const std::string& save_real_stats_path = "");

}  // namespace histogen::fid
