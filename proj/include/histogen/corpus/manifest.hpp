#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace histogen::corpus {

enum class ScoreLabel { Low, High };
enum class Split { Unassigned, Train, Test };
enum class Grouping { ByCase, ByPatch };

std::string to_string(ScoreLabel v);
std::string to_string(Split v);
std::string to_string(Grouping v);
ScoreLabel score_label_from_string(const std::string& s);
Split split_from_string(const std::string& s);
Grouping grouping_from_string(const std::string& s);

// One image patch with its caption components, split assignment and
// provenance. Serialized as one JSON object per manifest line.
struct PatchRecord {
    std::string patch_id;
    std::string image_path;  // relative to the manifest location
    std::string case_id;
    std::string report_text;
    ScoreLabel tumor_label = ScoreLabel::Low;
    ScoreLabel til_label = ScoreLabel::Low;
    Split split = Split::Unassigned;
    std::optional<std::string> caption;
};

struct Manifest {
    std::vector<PatchRecord> records;

    std::size_t size() const { return records.size(); }
    const PatchRecord* find(const std::string& patch_id) const;
};

// Split parameters. Identical spec over identical records yields
// byte-identical assignments; the spec is serialized alongside the manifest
// so splits stay auditable.
struct SplitSpec {
    std::uint64_t seed = 0;
    double test_fraction = 0.2;
    Grouping grouping = Grouping::ByCase;
};

struct SplitAssignment {
    SplitSpec spec;
    std::map<std::string, Split> assignments;  // group key -> split
};

void save_manifest(const std::string& path, const Manifest& m);
Manifest load_manifest(const std::string& path);

void save_split_sidecar(const std::string& path, const SplitAssignment& a);
SplitAssignment load_split_sidecar(const std::string& path);

// Scans image_dir for *.png patches and joins report and score tables.
// reports: JSONL {case_id, report_text}; scores: JSONL {patch_id, case_id,
// tumor, til}. Fails listing every offending patch_id if a table row is
// missing; records come out ordered by patch_id. image_path fields are
// stored relative to manifest_dir, the directory the manifest will live in.
Manifest build_manifest(const std::string& image_dir, const std::string& reports_path,
                        const std::string& scores_path, const std::string& manifest_dir);

// Seeded, grouped split assignment. Pure function of (records, spec).
SplitAssignment assign_splits(Manifest& manifest, const SplitSpec& spec);

// Absolute image paths for the records in one split (or all records when
// filter == Split::Unassigned). image_path fields resolve relative to
// manifest_dir, the directory holding the manifest.
std::vector<std::string> image_paths(const Manifest& manifest, const std::string& manifest_dir,
                                     Split filter);

// Rewrites image_path fields so the manifest can be saved under new_dir while
// still resolving to the same files. Purely lexical.
Manifest rebase_manifest(const Manifest& manifest, const std::string& old_dir,
                         const std::string& new_dir);

}  // namespace histogen::corpus
