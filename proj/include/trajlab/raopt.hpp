#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "trajlab/encoding.hpp"
#include "trajlab/mechanisms.hpp"
#include "trajlab/nn.hpp"

namespace trajlab::raopt {

struct ModelConfig {
  std::size_t loc_embed_units = 64;
  std::size_t hour_embed_units = 24;
  std::size_t dow_embed_units = 7;
  std::size_t fusion_units = 100;
  std::size_t lstm_units = 100;
  std::size_t max_len = 0;
};

struct TrainConfig {
  double lr = 0.001;
  std::size_t batch_size = 512;
  std::size_t max_epochs = 500;
  std::size_t early_stop_patience = 50;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

// Stop-after-patience bookkeeping for the training loop.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

  // Returns true when `patience` consecutive non-improving epochs have been
  // observed; an epoch improves only by being strictly below the best.
  bool observe(double loss) {
    if (loss < best_) {
      best_ = loss;
      best_epoch_ = epoch_;
      bad_streak_ = 0;
    } else {
      ++bad_streak_;
    }
    ++epoch_;
    return bad_streak_ >= patience_;
  }

  double best() const { return best_; }
  std::size_t best_epoch() const { return best_epoch_; }

 private:
  std::size_t patience_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::size_t epoch_ = 0;
  std::size_t bad_streak_ = 0;
};

// Feature split -> per-feature embeddings -> fusion -> biLSTM -> tanh heads,
// all time-shared. Copyable; copies share no state.
class Model {
 public:
  Model() = default;
  Model(const ModelConfig& cfg, const enc::EncoderConfig& encoder, Rng& rng);

  // (B, T, feature) -> (B, T, 2) scaled offsets; caches for backward
  nn::Tensor forward(const nn::Tensor& x, const nn::Tensor& mask);
  // dpred shaped like forward output; accumulates parameter gradients
  void backward(const nn::Tensor& dpred);

  std::vector<nn::Param*> params();
  const ModelConfig& config() const { return cfg_; }
  const enc::EncoderConfig& encoder() const { return encoder_; }
  enc::EncoderConfig& encoder() { return encoder_; }
  const std::vector<EpochStats>& history() const { return history_; }
  std::vector<EpochStats>& history() { return history_; }

 private:
  ModelConfig cfg_;
  enc::EncoderConfig encoder_;
  nn::TimeSharedDense loc_embed_, hour_embed_, dow_embed_, fusion_;
  nn::BiLstm lstm_;
  nn::TimeSharedDense head_lat_, head_lon_;
  std::vector<EpochStats> history_;
  // forward caches
  nn::Tensor loc_pre_, hour_pre_, dow_pre_, fusion_pre_, head_lat_out_, head_lon_out_;

  friend void save(const Model&, std::ostream&);
};

Model build(const ModelConfig& cfg, const enc::EncoderConfig& encoder, std::uint64_t seed);

// Closed-form number of trainable scalars for a configuration.
std::size_t parameter_count(const ModelConfig& cfg);

// Adam on haversine-MAE loss (MSE for pairs whose protected trajectory has
// invalid coordinates); early stopping on validation loss, best weights
// restored. Returns the per-epoch history (also stored in the model).
std::vector<EpochStats> train(Model& model, std::span<const mech::ProtectedPair> pairs,
                              const TrainConfig& cfg, std::ostream* log = nullptr);

std::vector<dataio::Trajectory> reconstruct(Model& model,
                                            std::span<const dataio::Trajectory> protected_trajs);

// Versioned text checkpoint; round-trips forward outputs bit-exactly.
void save(const Model& model, std::ostream& out);
Model load(std::istream& in);
void save_file(const Model& model, const std::string& path);
Model load_file(const std::string& path);

// Finite-difference checks for every layer, both losses and the assembled
// model at tiny shapes; prints one line per check. True when all pass.
bool run_gradient_checks(std::ostream* log);

void write_history_csv(std::span<const EpochStats> history, std::ostream& out);

}  // namespace trajlab::raopt
