#include "trajlab/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "trajlab/encoding.hpp"
#include "trajlab/rng.hpp"

namespace trajlab::harness {

namespace {

void log_line(std::ostream* log, const std::string& msg) {
  if (log) (*log) << msg << "\n";
}

double to_double(const std::map<std::string, std::string>& kv, const std::string& key,
                 double fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw std::runtime_error("config: bad numeric value for '" + key + "'");
  }
}

std::uint64_t to_u64(const std::map<std::string, std::string>& kv, const std::string& key,
                     std::uint64_t fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    return std::stoull(it->second);
  } catch (const std::exception&) {
    throw std::runtime_error("config: bad integer value for '" + key + "'");
  }
}

std::string to_str(const std::map<std::string, std::string>& kv, const std::string& key,
                   const std::string& fallback) {
  const auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

std::string require_str(const std::map<std::string, std::string>& kv,
                        const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw std::runtime_error("config: missing key '" + key + "'");
  return it->second;
}

struct FoldData {
  std::vector<mech::ProtectedPair> train_pairs;
  std::vector<mech::ProtectedPair> test_pairs;
};

void evaluate_pairs(std::span<const mech::ProtectedPair> test_pairs,
                    std::span<const dataio::Trajectory> reconstructed,
                    const geo::ReferenceFrame& ref,
                    std::vector<metrics::EvalRecord>& records) {
  for (std::size_t i = 0; i < test_pairs.size(); ++i) {
    const auto& orig = test_pairs[i].original;
    const auto& prot = test_pairs[i].protected_traj;
    const auto& reco = reconstructed[i];
    metrics::EvalRecord rec;
    rec.traj_id = orig.traj_id;
    rec.op_euclid = metrics::mean_euclidean(orig, prot);
    rec.or_euclid = metrics::mean_euclidean(orig, reco);
    rec.op_hausdorff = metrics::hausdorff(orig, prot);
    rec.or_hausdorff = metrics::hausdorff(orig, reco);
    rec.jaccard_before = metrics::jaccard_hulls(orig, prot, ref);
    rec.jaccard_after = metrics::jaccard_hulls(orig, reco, ref);
    records.push_back(std::move(rec));
  }
}

std::vector<dataio::Trajectory> select(const std::vector<dataio::Trajectory>& all,
                                       const std::vector<std::size_t>& idx) {
  std::vector<dataio::Trajectory> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(all[i]);
  return out;
}

bool boxes_overlap(double alo, double ahi, double blo, double bhi) {
  return alo <= bhi && blo <= ahi;
}

}  // namespace

std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>>
crossval_split(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("crossval_split: k must be at least 2");
  if (n < k) throw std::invalid_argument("crossval_split: dataset smaller than k");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(mix_seed(seed, 0x6376ULL));
  shuffle(order, rng);

  std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> folds(k);
  // fold f covers order[f*n/k, (f+1)*n/k); sizes differ by at most one
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t lo = f * n / k;
    const std::size_t hi = (f + 1) * n / k;
    auto& [train_idx, test_idx] = folds[f];
    for (std::size_t i = 0; i < n; ++i) {
      if (i >= lo && i < hi) {
        test_idx.push_back(order[i]);
      } else {
        train_idx.push_back(order[i]);
      }
    }
  }
  return folds;
}

std::map<std::string, std::string> parse_kv_text(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!key.empty()) kv[key] = value;
  }
  return kv;
}

std::map<std::string, std::string> parse_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  return parse_kv_text(in);
}

synth::SynthConfig synth_config_from_kv(const std::map<std::string, std::string>& kv) {
  synth::SynthConfig cfg;
  cfg.n_users = to_u64(kv, "n_users", cfg.n_users);
  cfg.trajs_per_user = to_u64(kv, "trajs_per_user", cfg.trajs_per_user);
  cfg.len_min = to_u64(kv, "len_min", cfg.len_min);
  cfg.len_max = to_u64(kv, "len_max", cfg.len_max);
  cfg.lat_min = to_double(kv, "lat_min", cfg.lat_min);
  cfg.lat_max = to_double(kv, "lat_max", cfg.lat_max);
  cfg.lon_min = to_double(kv, "lon_min", cfg.lon_min);
  cfg.lon_max = to_double(kv, "lon_max", cfg.lon_max);
  cfg.speed_min = to_double(kv, "speed_min", cfg.speed_min);
  cfg.speed_max = to_double(kv, "speed_max", cfg.speed_max);
  cfg.sample_interval = static_cast<std::int64_t>(to_u64(kv, "sample_interval",
                                                         cfg.sample_interval));
  cfg.turn_sigma = to_double(kv, "turn_sigma", cfg.turn_sigma);
  cfg.seed = to_u64(kv, "seed", cfg.seed);
  return cfg;
}

ExperimentConfig experiment_config_from_kv(const std::map<std::string, std::string>& kv) {
  ExperimentConfig cfg;
  cfg.id = to_str(kv, "id", cfg.id);
  cfg.dataset_train = require_str(kv, "dataset_train");
  cfg.dataset_test = require_str(kv, "dataset_test");
  cfg.mech_train.kind = mech::kind_from_name(to_str(kv, "mech_train", "CNoise"));
  cfg.mech_test.kind = mech::kind_from_name(to_str(kv, "mech_test", "CNoise"));
  cfg.mech_train.epsilon = to_double(kv, "eps_train", 1.0);
  cfg.mech_test.epsilon = to_double(kv, "eps_test", 1.0);
  const double m = to_double(kv, "sensitivity_m", 16500.0);
  cfg.mech_train.sensitivity_m = m;
  cfg.mech_test.sensitivity_m = m;
  const std::size_t inner = to_u64(kv, "max_inner_loops", 1000);
  cfg.mech_train.max_inner_loops = inner;
  cfg.mech_test.max_inner_loops = inner;
  cfg.folds = to_u64(kv, "folds", cfg.folds);
  cfg.runs = to_u64(kv, "runs", cfg.runs);
  cfg.max_folds = to_u64(kv, "max_folds", cfg.max_folds);
  cfg.seed = to_u64(kv, "seed", cfg.seed);
  cfg.out_dir = to_str(kv, "out", cfg.out_dir);
  cfg.threads = to_u64(kv, "threads", cfg.threads);
  cfg.model.loc_embed_units = to_u64(kv, "loc_embed_units", cfg.model.loc_embed_units);
  cfg.model.hour_embed_units = to_u64(kv, "hour_embed_units", cfg.model.hour_embed_units);
  cfg.model.dow_embed_units = to_u64(kv, "dow_embed_units", cfg.model.dow_embed_units);
  cfg.model.fusion_units = to_u64(kv, "fusion_units", cfg.model.fusion_units);
  cfg.model.lstm_units = to_u64(kv, "lstm_units", cfg.model.lstm_units);
  cfg.model.max_len = to_u64(kv, "max_len", cfg.model.max_len);
  cfg.train.lr = to_double(kv, "lr", cfg.train.lr);
  cfg.train.batch_size = to_u64(kv, "batch_size", cfg.train.batch_size);
  cfg.train.max_epochs = to_u64(kv, "max_epochs", cfg.train.max_epochs);
  cfg.train.early_stop_patience = to_u64(kv, "patience", cfg.train.early_stop_patience);
  cfg.train.val_fraction = to_double(kv, "val_fraction", cfg.train.val_fraction);
  cfg.train.threads = cfg.threads;
  return cfg;
}

std::vector<dataio::Trajectory> load_dataset(const std::string& source) {
  if (source.rfind("synth:", 0) == 0) {
    const auto kv = parse_kv_file(source.substr(6));
    return synth::generate(synth_config_from_kv(kv));
  }
  return dataio::read_canonical_file(source);
}

geo::ReferenceFrame dataset_reference(std::span<const dataio::Trajectory> trajs) {
  bool any = false;
  double lat_min = 0, lat_max = 0, lon_min = 0, lon_max = 0;
  for (const auto& t : trajs) {
    for (const auto& p : t.points) {
      if (!any) {
        lat_min = lat_max = p.lat;
        lon_min = lon_max = p.lon;
        any = true;
      } else {
        lat_min = std::min(lat_min, p.lat);
        lat_max = std::max(lat_max, p.lat);
        lon_min = std::min(lon_min, p.lon);
        lon_max = std::max(lon_max, p.lon);
      }
    }
  }
  if (!any) throw std::invalid_argument("dataset_reference: empty dataset");
  return {0.5 * (lat_min + lat_max), 0.5 * (lon_min + lon_max)};
}

namespace {

std::size_t longest_trajectory(std::span<const dataio::Trajectory> trajs) {
  std::size_t n = 0;
  for (const auto& t : trajs) n = std::max(n, t.size());
  return n;
}

struct PartOutcome {
  std::vector<metrics::EvalRecord> records;
};

PartOutcome run_part(const ExperimentConfig& cfg, std::size_t part,
                     const std::vector<dataio::Trajectory>& train_orig,
                     const std::vector<dataio::Trajectory>& test_orig,
                     const geo::ReferenceFrame& train_ref,
                     const geo::ReferenceFrame& test_ref, std::size_t max_len,
                     std::ostream* log) {
  mech::MechanismConfig mc_train = cfg.mech_train;
  mc_train.rng_seed = mix_seed(cfg.seed, part, 1);
  mech::MechanismConfig mc_test = cfg.mech_test;
  mc_test.rng_seed = mix_seed(cfg.seed, part, 2);

  mech::ProtectStats pstats;
  auto train_pairs =
      mech::protect_dataset(train_orig, mc_train, train_ref, &pstats, cfg.threads);
  auto test_pairs =
      mech::protect_dataset(test_orig, mc_test, test_ref, &pstats, cfg.threads);
  log_line(log, "part " + std::to_string(part) + ": protected " +
                    std::to_string(train_pairs.size()) + " train / " +
                    std::to_string(test_pairs.size()) + " test trajectories" +
                    (pstats.sdd_restarts
                         ? " (sdd restarts: " + std::to_string(pstats.sdd_restarts) + ")"
                         : ""));

  enc::EncoderConfig encoder = enc::fit_encoder(train_orig, max_len);
  // cross-dataset case: refit when the observable test region is disjoint
  // from the fitted box
  {
    double lat_lo = 0, lat_hi = 0, lon_lo = 0, lon_hi = 0;
    bool any = false;
    for (const auto& pair : test_pairs) {
      for (const auto& p : pair.protected_traj.points) {
        if (!any) {
          lat_lo = lat_hi = p.lat;
          lon_lo = lon_hi = p.lon;
          any = true;
        } else {
          lat_lo = std::min(lat_lo, p.lat);
          lat_hi = std::max(lat_hi, p.lat);
          lon_lo = std::min(lon_lo, p.lon);
          lon_hi = std::max(lon_hi, p.lon);
        }
      }
    }
    const bool disjoint =
        any && (!boxes_overlap(encoder.ref.lat0 - encoder.scale_lat,
                               encoder.ref.lat0 + encoder.scale_lat, lat_lo, lat_hi) ||
                !boxes_overlap(encoder.ref.lon0 - encoder.scale_lon,
                               encoder.ref.lon0 + encoder.scale_lon, lon_lo, lon_hi));
    if (disjoint) {
      std::vector<dataio::Trajectory> protected_only;
      protected_only.reserve(test_pairs.size());
      for (const auto& pair : test_pairs) protected_only.push_back(pair.protected_traj);
      encoder = enc::fit_encoder(protected_only, max_len);
      log_line(log, "part " + std::to_string(part) +
                        ": test region outside training box, encoder refit on "
                        "protected test data");
    }
  }

  raopt::ModelConfig model_cfg = cfg.model;
  model_cfg.max_len = max_len;
  raopt::Model model = raopt::build(model_cfg, encoder, mix_seed(cfg.seed, part, 3));
  raopt::TrainConfig tc = cfg.train;
  tc.seed = mix_seed(cfg.seed, part, 4);
  tc.threads = cfg.threads;
  const auto history = raopt::train(model, train_pairs, tc, log);

  std::filesystem::create_directories(cfg.out_dir);
  {
    std::ofstream hist(cfg.out_dir + "/history_" + cfg.id + "_" +
                       std::to_string(part) + ".csv");
    raopt::write_history_csv(history, hist);
  }

  std::vector<dataio::Trajectory> protected_only;
  protected_only.reserve(test_pairs.size());
  for (const auto& pair : test_pairs) protected_only.push_back(pair.protected_traj);
  const auto reconstructed = raopt::reconstruct(model, protected_only);

  PartOutcome out;
  evaluate_pairs(test_pairs, reconstructed, test_ref, out.records);
  return out;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, std::ostream* log) {
  const auto train_data = load_dataset(cfg.dataset_train);
  const bool same_source = cfg.dataset_train == cfg.dataset_test;
  const auto test_data = same_source ? train_data : load_dataset(cfg.dataset_test);
  if (train_data.empty() || test_data.empty()) {
    throw std::runtime_error("run_experiment: empty dataset");
  }

  std::size_t max_len = cfg.model.max_len;
  if (max_len == 0) {
    max_len = std::max(longest_trajectory(train_data), longest_trajectory(test_data));
  }

  ExperimentResult result;
  std::filesystem::create_directories(cfg.out_dir);
  result.results_csv = cfg.out_dir + "/results.csv";
  result.records_csv = cfg.out_dir + "/records_" + cfg.id + ".csv";

  try {
    if (same_source) {
      const geo::ReferenceFrame ref = dataset_reference(train_data);
      const auto folds = crossval_split(train_data.size(), cfg.folds, cfg.seed);
      const std::size_t limit =
          cfg.max_folds == 0 ? folds.size() : std::min(cfg.max_folds, folds.size());
      for (std::size_t f = 0; f < limit; ++f) {
        log_line(log, "fold " + std::to_string(f) + "/" + std::to_string(limit));
        const auto train_orig = select(train_data, folds[f].first);
        const auto test_orig = select(train_data, folds[f].second);
        auto part = run_part(cfg, f, train_orig, test_orig, ref, ref, max_len, log);
        result.records.insert(result.records.end(), part.records.begin(),
                              part.records.end());
        ++result.parts_run;
      }
    } else {
      const geo::ReferenceFrame train_ref = dataset_reference(train_data);
      const geo::ReferenceFrame test_ref = dataset_reference(test_data);
      const std::size_t limit =
          cfg.max_folds == 0 ? cfg.runs : std::min(cfg.max_folds, cfg.runs);
      for (std::size_t r = 0; r < limit; ++r) {
        log_line(log, "run " + std::to_string(r) + "/" + std::to_string(limit));
        auto part =
            run_part(cfg, r, train_data, test_data, train_ref, test_ref, max_len, log);
        result.records.insert(result.records.end(), part.records.begin(),
                              part.records.end());
        ++result.parts_run;
      }
    }
  } catch (const std::exception& e) {
    // flush whatever finished, marked as failed
    std::ofstream rec(result.records_csv);
    metrics::write_records_csv(result.records, rec);
    rec << "# failed: " << e.what() << "\n";
    throw;
  }

  result.summary = metrics::summarize(result.records);
  {
    std::ofstream rec(result.records_csv);
    metrics::write_records_csv(result.records, rec);
  }
  metrics::append_result_row(result.results_csv, cfg.id, cfg.dataset_train,
                             cfg.dataset_test, mech::kind_name(cfg.mech_train.kind),
                             mech::kind_name(cfg.mech_test.kind),
                             cfg.mech_train.epsilon, cfg.mech_test.epsilon,
                             result.summary);
  log_line(log, "experiment " + cfg.id + ": euclid reduction " +
                    std::to_string(result.summary.mean_euclid_reduction_pct) +
                    "% hausdorff " +
                    std::to_string(result.summary.mean_hausdorff_reduction_pct) + "%");
  return result;
}

BenchStats bench_reconstruct(raopt::Model& model,
                             std::span<const dataio::Trajectory> trajs,
                             std::size_t repetitions) {
  if (trajs.empty() || repetitions == 0) {
    throw std::invalid_argument("bench_reconstruct: nothing to measure");
  }
  // warm-up pass
  {
    const std::vector<dataio::Trajectory> one(trajs.begin(), trajs.begin() + 1);
    raopt::reconstruct(model, one);
  }
  std::vector<double> samples;
  samples.reserve(trajs.size() * repetitions);
  for (std::size_t rep = 0; rep < repetitions; ++rep) {
    for (const auto& t : trajs) {
      const std::vector<dataio::Trajectory> one{t};
      const auto t0 = std::chrono::steady_clock::now();
      raopt::reconstruct(model, one);
      const auto t1 = std::chrono::steady_clock::now();
      samples.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
  }
  BenchStats stats;
  stats.n = samples.size();
  double sum = 0.0;
  for (double s : samples) sum += s;
  stats.mean_ms = sum / static_cast<double>(samples.size());
  if (samples.size() > 1) {
    double ss = 0.0;
    for (double s : samples) ss += (s - stats.mean_ms) * (s - stats.mean_ms);
    const double sd = std::sqrt(ss / static_cast<double>(samples.size() - 1));
    stats.ci99_ms = 2.576 * sd / std::sqrt(static_cast<double>(samples.size()));
  }
  return stats;
}

}  // namespace trajlab::harness
