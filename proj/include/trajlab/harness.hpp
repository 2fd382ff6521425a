#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trajlab/dataio.hpp"
#include "trajlab/mechanisms.hpp"
#include "trajlab/metrics.hpp"
#include "trajlab/raopt.hpp"
#include "trajlab/synth.hpp"

namespace trajlab::harness {

// Dataset source: a canonical CSV path, or "synth:<config path>".
struct ExperimentConfig {
  std::string id = "exp";
  std::string dataset_train;
  std::string dataset_test;
  mech::MechanismConfig mech_train;
  mech::MechanismConfig mech_test;
  std::size_t folds = 5;      // CV mode (same train/test source)
  std::size_t runs = 5;       // independent-runs mode (different sources)
  std::size_t max_folds = 0;  // cap on folds/runs actually executed; 0 = all
  std::uint64_t seed = 0;
  std::string out_dir = ".";
  raopt::ModelConfig model;  // max_len 0 = fit to the data
  raopt::TrainConfig train;
  std::size_t threads = 1;
};

// Seeded shuffle into k near-equal disjoint folds covering [0, n).
std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>>
crossval_split(std::size_t n, std::size_t k, std::uint64_t seed);

struct ExperimentResult {
  metrics::Summary summary;
  std::vector<metrics::EvalRecord> records;
  std::size_t parts_run = 0;  // folds or runs executed
  std::string results_csv;
  std::string records_csv;
};

// Same source -> k-fold CV (protect each fold's portions separately);
// different sources -> independent runs over the full datasets. Appends one
// summary row to <out_dir>/results.csv and flushes per-trajectory records.
ExperimentResult run_experiment(const ExperimentConfig& cfg, std::ostream* log = nullptr);

struct BenchStats {
  double mean_ms = 0.0;
  double ci99_ms = 0.0;
  std::size_t n = 0;
};

// Wall-clock latency of encode + forward + decode per trajectory.
BenchStats bench_reconstruct(raopt::Model& model,
                             std::span<const dataio::Trajectory> trajs,
                             std::size_t repetitions);

// ---------------------------------------------------------------------------
// config plumbing

// "key = value" lines; '#' starts a comment, blank lines ignored.
std::map<std::string, std::string> parse_kv_text(std::istream& in);
std::map<std::string, std::string> parse_kv_file(const std::string& path);

synth::SynthConfig synth_config_from_kv(const std::map<std::string, std::string>& kv);
ExperimentConfig experiment_config_from_kv(const std::map<std::string, std::string>& kv);

// Loads a canonical CSV path or generates a "synth:<cfg>" dataset.
std::vector<dataio::Trajectory> load_dataset(const std::string& source);

// Midpoint of the dataset's bounding box.
geo::ReferenceFrame dataset_reference(std::span<const dataio::Trajectory> trajs);

}  // namespace trajlab::harness
