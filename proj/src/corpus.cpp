#include "histogen/corpus/manifest.hpp"
#include "histogen/corpus/caption.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "histogen/core/errors.hpp"
#include "histogen/core/image.hpp"
#include "histogen/core/rng.hpp"

namespace histogen::corpus {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(ScoreLabel v) { return v == ScoreLabel::Low ? "Low" : "High"; }
std::string to_string(Split v) {
    switch (v) {
        case Split::Train: return "train";
        case Split::Test: return "test";
        default: return "unassigned";
    }
}
std::string to_string(Grouping v) { return v == Grouping::ByCase ? "by_case" : "by_patch"; }

ScoreLabel score_label_from_string(const std::string& s) {
    if (s == "Low") return ScoreLabel::Low;
    if (s == "High") return ScoreLabel::High;
    throw ConfigError("invalid score label '" + s + "' (expected Low|High)");
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "test") return Split::Test;
    if (s == "unassigned") return Split::Unassigned;
    throw ConfigError("invalid split '" + s + "' (expected train|test)");
}

Grouping grouping_from_string(const std::string& s) {
    if (s == "by_case" || s == "case") return Grouping::ByCase;
    if (s == "by_patch" || s == "patch") return Grouping::ByPatch;
    throw ConfigError("invalid grouping '" + s + "' (expected by_case|by_patch)");
}

const PatchRecord* Manifest::find(const std::string& patch_id) const {
    for (const auto& r : records) {
        if (r.patch_id == patch_id) return &r;
    }
    return nullptr;
}

namespace {

json record_to_json(const PatchRecord& r) {
    json j{{"patch_id", r.patch_id},
           {"image_path", r.image_path},
           {"case_id", r.case_id},
           {"report_text", r.report_text},
           {"tumor_label", to_string(r.tumor_label)},
           {"til_label", to_string(r.til_label)}};
    if (r.split != Split::Unassigned) j["split"] = to_string(r.split);
    if (r.caption) j["caption"] = *r.caption;
    return j;
}

PatchRecord record_from_json(const json& j) {
    PatchRecord r;
    r.patch_id = j.at("patch_id").get<std::string>();
    r.image_path = j.at("image_path").get<std::string>();
    r.case_id = j.at("case_id").get<std::string>();
    r.report_text = j.at("report_text").get<std::string>();
    r.tumor_label = score_label_from_string(j.at("tumor_label").get<std::string>());
    r.til_label = score_label_from_string(j.at("til_label").get<std::string>());
    if (j.contains("split")) r.split = split_from_string(j.at("split").get<std::string>());
    if (j.contains("caption")) r.caption = j.at("caption").get<std::string>();
    return r;
}

}  // namespace

void save_manifest(const std::string& path, const Manifest& m) {
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write manifest: " + path);
    for (const auto& r : m.records) os << record_to_json(r).dump() << '\n';
    if (!os) throw IoError("short write on manifest: " + path);
}

Manifest load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read manifest: " + path);
    Manifest m;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            m.records.push_back(record_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw IoError("manifest " + path + " line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return m;
}

void save_split_sidecar(const std::string& path, const SplitAssignment& a) {
    json j{{"seed", a.spec.seed},
           {"test_fraction", a.spec.test_fraction},
           {"grouping", to_string(a.spec.grouping)}};
    json assign = json::object();
    for (const auto& [k, v] : a.assignments) assign[k] = to_string(v);
    j["assignments"] = assign;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write split sidecar: " + path);
    os << j.dump(2) << '\n';
}

SplitAssignment load_split_sidecar(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read split sidecar: " + path);
    json j = json::parse(is);
    SplitAssignment a;
    a.spec.seed = j.at("seed").get<std::uint64_t>();
    a.spec.test_fraction = j.at("test_fraction").get<double>();
    a.spec.grouping = grouping_from_string(j.at("grouping").get<std::string>());
    for (const auto& [k, v] : j.at("assignments").items()) {
        a.assignments[k] = split_from_string(v.get<std::string>());
    }
    return a;
}

namespace {

struct ScoreRow {
    std::string case_id;
    ScoreLabel tumor;
    ScoreLabel til;
};

std::map<std::string, std::string> load_reports(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read reports table: " + path);
    std::map<std::string, std::string> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        out[j.at("case_id").get<std::string>()] = j.at("report_text").get<std::string>();
    }
    return out;
}

std::map<std::string, ScoreRow> load_scores(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read scores table: " + path);
    std::map<std::string, ScoreRow> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        ScoreRow row;
        row.case_id = j.at("case_id").get<std::string>();
        row.tumor = score_label_from_string(j.at("tumor").get<std::string>());
        row.til = score_label_from_string(j.at("til").get<std::string>());
        const std::string pid = j.at("patch_id").get<std::string>();
        if (!out.emplace(pid, row).second) {
            throw ConfigError("duplicate patch_id in scores table: " + pid);
        }
    }
    return out;
}

}  // namespace

Manifest build_manifest(const std::string& image_dir, const std::string& reports_path,
                        const std::string& scores_path, const std::string& manifest_dir) {
    if (!fs::is_directory(image_dir)) throw IoError("image directory not found: " + image_dir);
    const fs::path manifest_abs = fs::absolute(manifest_dir).lexically_normal();
    const auto reports = load_reports(reports_path);
    const auto scores = load_scores(scores_path);

    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(image_dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".png") {
            files.push_back(entry.path());
        }
    }

    Manifest m;
    std::set<std::string> seen;
    std::vector<std::string> missing_scores, missing_reports, duplicates, unreadable;
    for (const auto& f : files) {
        const std::string patch_id = f.stem().string();
        if (!seen.insert(patch_id).second) {
            duplicates.push_back(patch_id);
            continue;
        }
        if (!is_readable_png(f.string())) {
            unreadable.push_back(f.string());
            continue;
        }
        const auto sit = scores.find(patch_id);
        if (sit == scores.end()) {
            missing_scores.push_back(patch_id);
            continue;
        }
        const auto rit = reports.find(sit->second.case_id);
        if (rit == reports.end()) {
            missing_reports.push_back(patch_id);
            continue;
        }
        PatchRecord r;
        r.patch_id = patch_id;
        r.image_path =
            fs::absolute(f).lexically_normal().lexically_relative(manifest_abs).string();
        r.case_id = sit->second.case_id;
        r.report_text = rit->second;
        r.tumor_label = sit->second.tumor;
        r.til_label = sit->second.til;
        m.records.push_back(std::move(r));
    }

    auto join = [](const std::vector<std::string>& v) {
        std::ostringstream os;
        for (std::size_t i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v[i];
        return os.str();
    };
    if (!duplicates.empty()) throw ConfigError("duplicate patch ids: " + join(duplicates));
    if (!unreadable.empty()) throw IoError("unreadable images: " + join(unreadable));
    if (!missing_scores.empty()) {
        throw ConfigError("patches with no score row: " + join(missing_scores));
    }
    if (!missing_reports.empty()) {
        throw ConfigError("patches with no report for their case: " + join(missing_reports));
    }

    std::sort(m.records.begin(), m.records.end(),
              [](const PatchRecord& a, const PatchRecord& b) { return a.patch_id < b.patch_id; });
    return m;
}

SplitAssignment assign_splits(Manifest& manifest, const SplitSpec& spec) {
    if (!(spec.test_fraction > 0.0 && spec.test_fraction < 1.0)) {
        throw ConfigError("test_fraction must lie in (0,1)");
    }
    std::set<std::string> group_set;
    for (const auto& r : manifest.records) {
        group_set.insert(spec.grouping == Grouping::ByCase ? r.case_id : r.patch_id);
    }
    if (group_set.size() < 2) {
        throw ConfigError("cannot split: fewer than 2 groups under " + to_string(spec.grouping));
    }

    // Sorted group list + seeded Fisher-Yates makes the assignment a pure
    // function of (records, spec).
    std::vector<std::string> groups(group_set.begin(), group_set.end());
    Rng rng(spec.seed);
    rng.shuffle(groups.begin(), groups.end());

    auto n_test = static_cast<std::size_t>(
        std::llround(spec.test_fraction * static_cast<double>(groups.size())));
    n_test = std::min(std::max<std::size_t>(n_test, 1), groups.size() - 1);

    SplitAssignment out;
    out.spec = spec;
    for (std::size_t i = 0; i < groups.size(); ++i) {
        out.assignments[groups[i]] = i < n_test ? Split::Test : Split::Train;
    }
    for (auto& r : manifest.records) {
        const std::string& key = spec.grouping == Grouping::ByCase ? r.case_id : r.patch_id;
        r.split = out.assignments.at(key);
    }
    return out;
}

std::vector<std::string> image_paths(const Manifest& manifest, const std::string& manifest_dir,
                                     Split filter) {
    std::vector<std::string> out;
    for (const auto& r : manifest.records) {
        if (filter != Split::Unassigned && r.split != filter) continue;
        out.push_back((fs::path(manifest_dir) / r.image_path).lexically_normal().string());
    }
    return out;
}

Manifest rebase_manifest(const Manifest& manifest, const std::string& old_dir,
                         const std::string& new_dir) {
    const fs::path from = fs::absolute(old_dir).lexically_normal();
    const fs::path to = fs::absolute(new_dir).lexically_normal();
    Manifest out = manifest;
    for (auto& r : out.records) {
        r.image_path =
            (from / r.image_path).lexically_normal().lexically_relative(to).string();
    }
    return out;
}

std::string tumor_clause(ScoreLabel v) {
    return v == ScoreLabel::Low ? "Low tumour;" : "High tumour;";
}
std::string til_clause(ScoreLabel v) { return v == ScoreLabel::Low ? "Low TIL;" : "High TIL;"; }

std::string compose_caption(const std::string& summary, ScoreLabel tumor, ScoreLabel til) {
    if (summary.empty()) throw ConfigError("compose_caption: empty summary");
    return summary + " " + tumor_clause(tumor) + " " + til_clause(til);
}

}  // namespace histogen::corpus
