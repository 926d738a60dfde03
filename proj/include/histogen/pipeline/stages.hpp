#pragma once

#include <string>
#include <vector>

#include "histogen/pipeline/config.hpp"

namespace histogen::pipeline {

enum class Stage { CorpusBuild, CorpusSplit, Summarize, TrainVae, TrainLdm, Sample, Fid };

std::string to_string(Stage s);
Stage stage_from_string(const std::string& s);

struct StageReport {
    std::string stage;
    bool ok = false;
    double duration_ms = 0;
    std::vector<std::string> artifacts;
    std::string error;
    nlohmann::json extra;

    nlohmann::json to_json() const;
};

// Runs one stage: validates prerequisites (naming the producing stage when
// one is missing), snapshots the config into the run directory, writes the
// machine-readable stage report. Errors land in the report, never half-done
// artifacts.
StageReport run_stage(Stage stage, const PipelineConfig& config);

// Sequential staged execution; stops at the first failure.
std::vector<StageReport> run_pipeline(const std::vector<Stage>& stages,
                                      const PipelineConfig& config);

// One trained model + FID + peak-memory figure per budget; failures are
// isolated per budget and a partial report is still emitted.
nlohmann::json token_length_study(const std::vector<int>& budgets, const PipelineConfig& base,
                                  const std::string& report_path);

}  // namespace histogen::pipeline
