// Command line front end: synth, preprocess, protect, train, reconstruct,
// evaluate, pipeline, bench, gradcheck. Subcommand parameters come from
// "key = value" config files; --seed and --out override the config.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "trajlab/dataio.hpp"
#include "trajlab/encoding.hpp"
#include "trajlab/harness.hpp"
#include "trajlab/mechanisms.hpp"
#include "trajlab/metrics.hpp"
#include "trajlab/raopt.hpp"
#include "trajlab/synth.hpp"

namespace {

using namespace trajlab;
using KV = std::map<std::string, std::string>;

struct CommonArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

std::ostream* logger(const CommonArgs& args) { return args.quiet ? nullptr : &std::cerr; }

KV load_config(const CommonArgs& args) {
  if (args.config.empty()) throw std::runtime_error("--config is required");
  return harness::parse_kv_file(args.config);
}

std::string kv_get(const KV& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw std::runtime_error("config: missing key '" + key + "'");
  return it->second;
}

std::string kv_get(const KV& kv, const std::string& key, const std::string& fallback) {
  const auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

double kv_num(const KV& kv, const std::string& key, double fallback) {
  const auto it = kv.find(key);
  return it == kv.end() ? fallback : std::stod(it->second);
}

std::uint64_t kv_u64(const KV& kv, const std::string& key, std::uint64_t fallback) {
  const auto it = kv.find(key);
  return it == kv.end() ? fallback : std::stoull(it->second);
}

int cmd_synth(const CommonArgs& args) {
  const KV kv = load_config(args);
  synth::SynthConfig cfg = harness::synth_config_from_kv(kv);
  if (args.seed) cfg.seed = *args.seed;
  const auto trajs = synth::generate(cfg);
  const std::string out = args.out.empty() ? "synthetic.csv" : args.out;
  dataio::write_canonical_file(trajs, out);
  if (auto* log = logger(args)) {
    (*log) << "synth: wrote " << trajs.size() << " trajectories ("
           << dataio::total_points(trajs) << " points) to " << out << "\n";
  }
  return 0;
}

int cmd_preprocess(const CommonArgs& args) {
  const KV kv = load_config(args);
  const std::string input = kv_get(kv, "input");
  const std::string format = kv_get(kv, "format", "canonical");
  std::vector<dataio::Trajectory> trajs;
  if (format == "tdrive") {
    std::ifstream in(input);
    if (!in) throw std::runtime_error("cannot open: " + input);
    trajs = dataio::parse_tdrive(in);
  } else if (format == "geolife") {
    trajs = dataio::parse_geolife(input);
  } else if (format == "canonical") {
    trajs = dataio::read_canonical_file(input);
  } else {
    throw std::runtime_error("unknown input format: " + format);
  }

  dataio::PreprocessConfig cfg;
  cfg.bbox_percentile = kv_num(kv, "bbox_percentile", cfg.bbox_percentile);
  cfg.max_speed_mps = kv_num(kv, "max_speed_mps", cfg.max_speed_mps);
  cfg.gap_seconds = static_cast<std::int64_t>(kv_u64(kv, "gap_seconds", cfg.gap_seconds));
  cfg.min_len = kv_u64(kv, "min_len", cfg.min_len);
  cfg.max_len = kv_u64(kv, "max_len", cfg.max_len);

  dataio::PreprocessSummary summary;
  const auto out_trajs = dataio::preprocess(trajs, cfg, &summary);
  const std::string out = args.out.empty() ? "preprocessed.csv" : args.out;
  dataio::write_canonical_file(out_trajs, out);
  if (auto* log = logger(args)) {
    (*log) << summary.to_text();
    (*log) << "preprocess: wrote " << out_trajs.size() << " trajectories to " << out
           << "\n";
  }
  return 0;
}

mech::MechanismConfig mech_from_kv(const KV& kv) {
  mech::MechanismConfig cfg;
  cfg.kind = mech::kind_from_name(kv_get(kv, "kind", "CNoise"));
  cfg.epsilon = kv_num(kv, "epsilon", cfg.epsilon);
  cfg.sensitivity_m = kv_num(kv, "sensitivity_m", cfg.sensitivity_m);
  cfg.max_inner_loops = kv_u64(kv, "max_inner_loops", cfg.max_inner_loops);
  cfg.rng_seed = kv_u64(kv, "seed", cfg.rng_seed);
  return cfg;
}

int cmd_protect(const CommonArgs& args) {
  const KV kv = load_config(args);
  mech::MechanismConfig cfg = mech_from_kv(kv);
  if (args.seed) cfg.rng_seed = *args.seed;
  const auto trajs = harness::load_dataset(kv_get(kv, "input"));
  const std::size_t threads = kv_u64(kv, "threads", 1);
  const geo::ReferenceFrame ref = harness::dataset_reference(trajs);

  mech::ProtectStats stats;
  const auto pairs = mech::protect_dataset(trajs, cfg, ref, &stats, threads);

  const std::string prefix = args.out.empty() ? "protected" : args.out;
  std::vector<dataio::Trajectory> originals, protecteds;
  originals.reserve(pairs.size());
  protecteds.reserve(pairs.size());
  for (const auto& p : pairs) {
    originals.push_back(p.original);
    protecteds.push_back(p.protected_traj);
  }
  dataio::write_canonical_file(originals, prefix + ".original.csv");
  dataio::write_canonical_file(protecteds, prefix + ".protected.csv");
  {
    std::ofstream desc(prefix + ".mech.txt");
    desc << "kind=" << mech::kind_name(cfg.kind) << " epsilon=" << cfg.epsilon
         << " sensitivity_m=" << cfg.sensitivity_m << " seed=" << cfg.rng_seed << "\n";
  }
  if (auto* log = logger(args)) {
    (*log) << "protect: " << pairs.size() << " trajectories with "
           << mech::kind_name(cfg.kind);
    if (stats.sdd_restarts) (*log) << " (restarts: " << stats.sdd_restarts << ")";
    (*log) << ", wrote " << prefix << ".{original,protected}.csv\n";
  }
  return 0;
}

raopt::ModelConfig model_from_kv(const KV& kv) {
  raopt::ModelConfig cfg;
  cfg.loc_embed_units = kv_u64(kv, "loc_embed_units", cfg.loc_embed_units);
  cfg.hour_embed_units = kv_u64(kv, "hour_embed_units", cfg.hour_embed_units);
  cfg.dow_embed_units = kv_u64(kv, "dow_embed_units", cfg.dow_embed_units);
  cfg.fusion_units = kv_u64(kv, "fusion_units", cfg.fusion_units);
  cfg.lstm_units = kv_u64(kv, "lstm_units", cfg.lstm_units);
  cfg.max_len = kv_u64(kv, "max_len", cfg.max_len);
  return cfg;
}

raopt::TrainConfig train_from_kv(const KV& kv) {
  raopt::TrainConfig cfg;
  cfg.lr = kv_num(kv, "lr", cfg.lr);
  cfg.batch_size = kv_u64(kv, "batch_size", cfg.batch_size);
  cfg.max_epochs = kv_u64(kv, "max_epochs", cfg.max_epochs);
  cfg.early_stop_patience = kv_u64(kv, "patience", cfg.early_stop_patience);
  cfg.val_fraction = kv_num(kv, "val_fraction", cfg.val_fraction);
  cfg.seed = kv_u64(kv, "seed", cfg.seed);
  cfg.threads = kv_u64(kv, "threads", cfg.threads);
  return cfg;
}

int cmd_train(const CommonArgs& args) {
  const KV kv = load_config(args);
  const auto originals = dataio::read_canonical_file(kv_get(kv, "original"));
  const auto protecteds = dataio::read_canonical_file(kv_get(kv, "protected"));
  if (originals.size() != protecteds.size()) {
    throw std::runtime_error("train: original/protected datasets differ in size");
  }
  std::vector<mech::ProtectedPair> pairs(originals.size());
  for (std::size_t i = 0; i < originals.size(); ++i) {
    pairs[i].original = originals[i];
    pairs[i].protected_traj = protecteds[i];
  }
  raopt::ModelConfig mc = model_from_kv(kv);
  raopt::TrainConfig tc = train_from_kv(kv);
  if (args.seed) tc.seed = *args.seed;
  std::size_t max_len = mc.max_len;
  for (const auto& t : originals) max_len = std::max(max_len, t.size());
  for (const auto& t : protecteds) max_len = std::max(max_len, t.size());
  mc.max_len = max_len;

  const auto encoder = enc::fit_encoder(originals, max_len);
  raopt::Model model = raopt::build(mc, encoder, tc.seed);
  const auto history = raopt::train(model, pairs, tc, logger(args));

  const std::string out = args.out.empty() ? "model.ckpt" : args.out;
  raopt::save_file(model, out);
  {
    std::ofstream hist(out + ".history.csv");
    raopt::write_history_csv(history, hist);
  }
  if (auto* log = logger(args)) {
    (*log) << "train: " << history.size() << " epochs, checkpoint " << out << "\n";
  }
  return 0;
}

int cmd_reconstruct(const CommonArgs& args) {
  const KV kv = load_config(args);
  raopt::Model model = raopt::load_file(kv_get(kv, "model"));
  const auto protecteds = dataio::read_canonical_file(kv_get(kv, "input"));
  const auto reconstructed = raopt::reconstruct(model, protecteds);
  const std::string out = args.out.empty() ? "reconstructed.csv" : args.out;
  dataio::write_canonical_file(reconstructed, out);
  if (auto* log = logger(args)) {
    (*log) << "reconstruct: " << reconstructed.size() << " trajectories to " << out
           << "\n";
  }
  return 0;
}

int cmd_evaluate(const CommonArgs& args) {
  const KV kv = load_config(args);
  const auto originals = dataio::read_canonical_file(kv_get(kv, "original"));
  const auto protecteds = dataio::read_canonical_file(kv_get(kv, "protected"));
  const auto reconstructed = dataio::read_canonical_file(kv_get(kv, "reconstructed"));
  if (originals.size() != protecteds.size() ||
      originals.size() != reconstructed.size()) {
    throw std::runtime_error("evaluate: dataset sizes differ");
  }
  const geo::ReferenceFrame ref = harness::dataset_reference(originals);
  std::vector<metrics::EvalRecord> records;
  for (std::size_t i = 0; i < originals.size(); ++i) {
    metrics::EvalRecord rec;
    rec.traj_id = originals[i].traj_id;
    rec.op_euclid = metrics::mean_euclidean(originals[i], protecteds[i]);
    rec.or_euclid = metrics::mean_euclidean(originals[i], reconstructed[i]);
    rec.op_hausdorff = metrics::hausdorff(originals[i], protecteds[i]);
    rec.or_hausdorff = metrics::hausdorff(originals[i], reconstructed[i]);
    rec.jaccard_before = metrics::jaccard_hulls(originals[i], protecteds[i], ref);
    rec.jaccard_after = metrics::jaccard_hulls(originals[i], reconstructed[i], ref);
    records.push_back(std::move(rec));
  }
  const auto summary = metrics::summarize(records);
  const std::string out = args.out.empty() ? "results.csv" : args.out;
  {
    std::ofstream rec(out + ".records.csv");
    metrics::write_records_csv(records, rec);
  }
  metrics::append_result_row(out, kv_get(kv, "id", "eval"),
                             kv_get(kv, "dataset_train", "-"),
                             kv_get(kv, "dataset_test", "-"),
                             kv_get(kv, "mech_train", "-"), kv_get(kv, "mech_test", "-"),
                             kv_num(kv, "eps_train", 0.0), kv_num(kv, "eps_test", 0.0),
                             summary);
  if (auto* log = logger(args)) {
    (*log) << "evaluate: euclid reduction " << summary.mean_euclid_reduction_pct
           << "% (ci99 +-" << summary.ci99_euclid << "), hausdorff "
           << summary.mean_hausdorff_reduction_pct << "% (ci99 +-"
           << summary.ci99_hausdorff << "), jaccard " << summary.mean_jaccard_before
           << " -> " << summary.mean_jaccard_after << ", n=" << summary.n << "\n";
  }
  return 0;
}

int cmd_pipeline(const CommonArgs& args) {
  const KV kv = load_config(args);
  harness::ExperimentConfig cfg = harness::experiment_config_from_kv(kv);
  if (args.seed) cfg.seed = *args.seed;
  if (!args.out.empty()) cfg.out_dir = args.out;
  const auto result = harness::run_experiment(cfg, logger(args));
  std::cout << "experiment " << cfg.id << ": euclid_reduction_pct="
            << result.summary.mean_euclid_reduction_pct
            << " hausdorff_reduction_pct=" << result.summary.mean_hausdorff_reduction_pct
            << " jaccard_before=" << result.summary.mean_jaccard_before
            << " jaccard_after=" << result.summary.mean_jaccard_after
            << " n=" << result.summary.n << "\n";
  return 0;
}

int cmd_bench(const CommonArgs& args) {
  const KV kv = load_config(args);
  raopt::Model model = raopt::load_file(kv_get(kv, "model"));
  const auto trajs = harness::load_dataset(kv_get(kv, "input"));
  const std::size_t reps = kv_u64(kv, "repetitions", 5);
  const auto stats = harness::bench_reconstruct(model, trajs, reps);
  std::cout << "bench: mean " << stats.mean_ms << " ms per trajectory, 99% ci +-"
            << stats.ci99_ms << " ms over " << stats.n << " samples\n";
  return 0;
}

int cmd_gradcheck(const CommonArgs& args) {
  const bool ok = raopt::run_gradient_checks(args.quiet ? nullptr : &std::cout);
  std::cout << (ok ? "gradcheck: all checks passed\n"
                   : "gradcheck: FAILURES detected\n");
  return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trajectory privacy laboratory"};
  app.require_subcommand(1);

  CommonArgs args;
  std::uint64_t seed_value = 0;

  const auto add_common = [&](CLI::App* cmd, bool needs_config) {
    auto* copt = cmd->add_option("--config", args.config, "key = value config file");
    if (needs_config) copt->required();
    cmd->add_option("--out", args.out, "output path");
    cmd->add_option("--seed", seed_value, "override the config seed")
        ->each([&](const std::string&) { args.seed = seed_value; });
    cmd->add_flag("--quiet", args.quiet, "suppress progress output");
  };

  add_common(app.add_subcommand("synth", "generate a synthetic dataset"), true);
  add_common(app.add_subcommand("preprocess", "sanitize a raw dataset"), true);
  add_common(app.add_subcommand("protect", "apply a protection mechanism"), true);
  add_common(app.add_subcommand("train", "train the reconstruction model"), true);
  add_common(app.add_subcommand("reconstruct", "reconstruct protected trajectories"),
             true);
  add_common(app.add_subcommand("evaluate", "compute distance/jaccard metrics"), true);
  add_common(app.add_subcommand("pipeline", "run a full experiment"), true);
  add_common(app.add_subcommand("bench", "measure reconstruction latency"), true);
  add_common(app.add_subcommand("gradcheck", "finite-difference gradient checks"),
             false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (app.got_subcommand("synth")) return cmd_synth(args);
    if (app.got_subcommand("preprocess")) return cmd_preprocess(args);
    if (app.got_subcommand("protect")) return cmd_protect(args);
    if (app.got_subcommand("train")) return cmd_train(args);
    if (app.got_subcommand("reconstruct")) return cmd_reconstruct(args);
    if (app.got_subcommand("evaluate")) return cmd_evaluate(args);
    if (app.got_subcommand("pipeline")) return cmd_pipeline(args);
    if (app.got_subcommand("bench")) return cmd_bench(args);
    if (app.got_subcommand("gradcheck")) return cmd_gradcheck(args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
