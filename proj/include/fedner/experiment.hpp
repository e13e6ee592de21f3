#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedner/federation.hpp"
#include "fedner/tagger.hpp"
#include "fedner/trainer.hpp"

namespace fedner {

/// Invalid configuration (unknown key, bad value, impossible schedule).
/// The CLI maps this to exit code 2; other failures exit 1.
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
    std::string corpus_path;
    std::string test_corpus_path;
    std::size_t schedule_base = 2;
    std::size_t schedule_step = 2;
    Method method = Method::kLgfd;
    std::vector<std::uint64_t> seeds;
    std::string output_dir = ".";
    FederationConfig fed;
    TaggerConfig tagger;

    void validate() const;
};

/// Flat `key = value` file, '#' comments, unknown keys rejected.
ExperimentConfig parse_config_file(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text, const std::string& name);

struct RunPaths {
    std::string rounds_file(const std::string& method, std::uint64_t seed) const;
    std::string metrics_file(const std::string& method) const;
    std::string summary_file(const std::string& method) const;
    std::string dir;
};

/// Runs the full pipeline for every seed and writes, per method:
///   rounds_<method>_seed<seed>.jsonl   one record per global round
///   metrics_<method>.csv               seed,task,old_ma_f1,new_ma_f1,all_mi_f1,all_ma_f1
///   summary_<method>.csv               seed,avg_mi_f1,avg_ma_f1  (tasks >= 2)
/// Outputs are flushed incrementally so partial results survive a failure.
/// Returns the per-seed outcomes in seed order.
std::vector<ExperimentOutcome> run(const ExperimentConfig& config);

std::string format_f1(double v);

}  // namespace fedner
