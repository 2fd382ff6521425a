#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "trajlab/dataio.hpp"
#include "trajlab/geo.hpp"
#include "trajlab/rng.hpp"

namespace trajlab::mech {

enum class Kind { CNoise, SDD };

std::string kind_name(Kind k);
Kind kind_from_name(const std::string& name);

struct MechanismConfig {
  Kind kind = Kind::CNoise;
  double epsilon = 1.0;
  double sensitivity_m = 16500.0;
  std::size_t max_inner_loops = 1000;
  std::uint64_t rng_seed = 0;
};

struct ProtectedPair {
  dataio::Trajectory original;
  dataio::Trajectory protected_traj;
  MechanismConfig mechanism;
};

struct SddStats {
  std::size_t restarts = 0;
};

struct ProtectStats {
  std::size_t sdd_restarts = 0;
};

// Laplace(0, b) by inverse CDF on a single uniform draw; u = 1/2 maps to 0.
double laplace_inverse_cdf(double u, double scale_b);
double laplace_sample(Rng& rng, double scale_b);

// Categorical distribution with P(i) proportional to
// exp(epsilon_step * scores[i] / (2 * delta_u)), max-subtracted for stability.
std::vector<double> exp_mech_probabilities(std::span<const double> scores,
                                           double epsilon_step, double delta_u);
std::size_t exp_mech_sample(Rng& rng, std::span<const double> scores,
                            double epsilon_step, double delta_u);

// Independent Laplace noise with scale sqrt(2)*M/epsilon on each local
// coordinate of every point; timestamps and length unchanged.
dataio::Trajectory cnoise(const dataio::Trajectory& traj, const MechanismConfig& cfg,
                          const geo::ReferenceFrame& ref, Rng& rng);

// Sequential exponential-mechanism sampling of (distance, direction) steps
// with an endpoint reachability constraint; per-scalar budget epsilon/(2n).
// endpoint_mod additionally republishes the first and last point from their
// published neighbors. Requires n >= 3.
dataio::Trajectory sdd(const dataio::Trajectory& traj, const MechanismConfig& cfg,
                       const geo::ReferenceFrame& ref, Rng& rng,
                       SddStats* stats = nullptr, bool endpoint_mod = true);

// Applies cfg.kind per trajectory with sub-seeded independent generators;
// deterministic given cfg.rng_seed for any thread count.
std::vector<ProtectedPair> protect_dataset(std::span<const dataio::Trajectory> trajs,
                                           const MechanismConfig& cfg,
                                           const geo::ReferenceFrame& ref,
                                           ProtectStats* stats = nullptr,
                                           std::size_t threads = 1);

// Number of discretization bins per sampled scalar in sdd.
inline constexpr std::size_t kSddBins = 1024;

}  // namespace trajlab::mech
