#include "trajlab/mechanisms.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>

namespace trajlab::mech {

std::string kind_name(Kind k) { return k == Kind::CNoise ? "CNoise" : "SDD"; }

Kind kind_from_name(const std::string& name) {
  if (name == "CNoise" || name == "cnoise") return Kind::CNoise;
  if (name == "SDD" || name == "sdd") return Kind::SDD;
  throw std::invalid_argument("unknown mechanism kind: " + name);
}

double laplace_inverse_cdf(double u, double scale_b) {
  if (!(scale_b > 0.0)) throw std::domain_error("laplace: scale must be positive");
  if (!(u > 0.0 && u < 1.0)) throw std::domain_error("laplace: u must be in (0, 1)");
  const double d = u - 0.5;
  const double sign = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
  return -scale_b * sign * std::log1p(-2.0 * std::fabs(d));
}

double laplace_sample(Rng& rng, double scale_b) {
  return laplace_inverse_cdf(rng.uniform01_open(), scale_b);
}

std::vector<double> exp_mech_probabilities(std::span<const double> scores,
                                           double epsilon_step, double delta_u) {
  if (scores.empty()) throw std::domain_error("exp_mech: empty score list");
  if (!(delta_u > 0.0)) throw std::domain_error("exp_mech: delta_u must be positive");
  const double k = epsilon_step / (2.0 * delta_u);
  double max_arg = -std::numeric_limits<double>::infinity();
  for (double s : scores) {
    if (!std::isfinite(s)) throw std::domain_error("exp_mech: non-finite score");
    max_arg = std::max(max_arg, k * s);
  }
  std::vector<double> probs(scores.size());
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    probs[i] = std::exp(k * scores[i] - max_arg);
    total += probs[i];
  }
  for (double& p : probs) p /= total;
  return probs;
}

std::size_t exp_mech_sample(Rng& rng, std::span<const double> scores,
                            double epsilon_step, double delta_u) {
  const auto probs = exp_mech_probabilities(scores, epsilon_step, delta_u);
  const double u = rng.uniform01();
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  return probs.size() - 1;
}

dataio::Trajectory cnoise(const dataio::Trajectory& traj, const MechanismConfig& cfg,
                          const geo::ReferenceFrame& ref, Rng& rng) {
  if (!(cfg.epsilon > 0.0) || !(cfg.sensitivity_m > 0.0)) {
    throw std::domain_error("cnoise: epsilon and sensitivity must be positive");
  }
  const double b = std::sqrt(2.0) * cfg.sensitivity_m / cfg.epsilon;
  dataio::Trajectory out{traj.user_id, traj.traj_id, {}};
  out.points.reserve(traj.size());
  for (const auto& p : traj.points) {
    geo::LocalPoint lp = geo::to_local(ref, {p.lat, p.lon});
    lp.x += laplace_sample(rng, b);
    lp.y += laplace_sample(rng, b);
    const geo::GeoPoint g = geo::to_geo(ref, lp);
    out.points.push_back({g.lat, g.lon, p.timestamp});
  }
  return out;
}

namespace {

struct SddSampler {
  double eps_step;
  double sensitivity;
  std::vector<double> dist_vals;   // bin centers over [0, M]
  std::vector<double> angle_vals;  // bin centers over [0, 2*pi)
  std::vector<double> scores;      // scratch

  SddSampler(double eps_step_, double sensitivity_)
      : eps_step(eps_step_), sensitivity(sensitivity_) {
    dist_vals.resize(kSddBins);
    angle_vals.resize(kSddBins);
    scores.resize(kSddBins);
    for (std::size_t j = 0; j < kSddBins; ++j) {
      dist_vals[j] = (static_cast<double>(j) + 0.5) * sensitivity / kSddBins;
      angle_vals[j] = (static_cast<double>(j) + 0.5) * 2.0 * geo::kPi / kSddBins;
    }
  }

  // one (distance, direction) draw from `from` toward `target`
  geo::LocalPoint draw(Rng& rng, const geo::LocalPoint& from,
                       const geo::LocalPoint& target) {
    const auto [d_raw, theta_true] = geo::polar_between(from, target);
    const double d_true = std::clamp(d_raw, 0.0, sensitivity);
    for (std::size_t j = 0; j < kSddBins; ++j) {
      scores[j] = -std::fabs(dist_vals[j] - d_true);
    }
    const double d_hat = dist_vals[exp_mech_sample(rng, scores, eps_step, sensitivity)];
    for (std::size_t j = 0; j < kSddBins; ++j) {
      scores[j] = -geo::angular_distance(angle_vals[j], theta_true);
    }
    const double theta_hat =
        angle_vals[exp_mech_sample(rng, scores, eps_step, geo::kPi)];
    return geo::polar_step(from, d_hat, theta_hat);
  }
};

}  // namespace

dataio::Trajectory sdd(const dataio::Trajectory& traj, const MechanismConfig& cfg,
                       const geo::ReferenceFrame& ref, Rng& rng, SddStats* stats,
                       bool endpoint_mod) {
  const std::size_t n = traj.size();
  if (n < 3) throw std::domain_error("sdd: trajectory must have at least 3 points");
  if (!(cfg.epsilon > 0.0) || !(cfg.sensitivity_m > 0.0)) {
    throw std::domain_error("sdd: epsilon and sensitivity must be positive");
  }

  std::vector<geo::LocalPoint> pts(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = traj.points[i];
    if (!std::isfinite(p.lat) || !std::isfinite(p.lon)) {
      throw std::domain_error("sdd: non-finite coordinates");
    }
    pts[i] = geo::to_local(ref, {p.lat, p.lon});
  }

  const double eps_step = cfg.epsilon / (2.0 * static_cast<double>(n));
  const double m = cfg.sensitivity_m;
  SddSampler sampler(eps_step, m);

  constexpr std::size_t kMaxRestarts = 1000;
  std::vector<geo::LocalPoint> pub(n);
  std::size_t restarts = 0;
  for (;;) {
    pub[0] = pts[0];
    pub[n - 1] = pts[n - 1];
    bool restart = false;
    for (std::size_t i = 1; i + 1 < n && !restart; ++i) {
      const double reach = static_cast<double>(n - 1 - i) * m;
      bool accepted = false;
      for (std::size_t attempt = 0; attempt < cfg.max_inner_loops; ++attempt) {
        const geo::LocalPoint q = sampler.draw(rng, pub[i - 1], pts[i]);
        if (std::hypot(q.x - pts[n - 1].x, q.y - pts[n - 1].y) <= reach) {
          pub[i] = q;
          accepted = true;
          break;
        }
      }
      if (!accepted) restart = true;
    }
    if (!restart) break;
    if (++restarts >= kMaxRestarts) {
      throw std::runtime_error("sdd: trajectory " + traj.traj_id + " restarted " +
                               std::to_string(restarts) +
                               " times without terminating (n=" + std::to_string(n) +
                               ", epsilon=" + std::to_string(cfg.epsilon) + ")");
    }
  }
  if (stats) stats->restarts += restarts;

  if (endpoint_mod) {
    // republish endpoints from their published neighbors toward the true ends
    pub[0] = sampler.draw(rng, pub[1], pts[0]);
    pub[n - 1] = sampler.draw(rng, pub[n - 2], pts[n - 1]);
  }

  dataio::Trajectory out{traj.user_id, traj.traj_id, {}};
  out.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const geo::GeoPoint g = geo::to_geo(ref, pub[i]);
    out.points.push_back({g.lat, g.lon, traj.points[i].timestamp});
  }
  return out;
}

std::vector<ProtectedPair> protect_dataset(std::span<const dataio::Trajectory> trajs,
                                           const MechanismConfig& cfg,
                                           const geo::ReferenceFrame& ref,
                                           ProtectStats* stats, std::size_t threads) {
  std::vector<ProtectedPair> out(trajs.size());
  std::vector<std::size_t> restart_counts(threads == 0 ? 1 : threads, 0);
  threads = std::max<std::size_t>(1, threads);

  auto work = [&](std::size_t worker) {
    for (std::size_t i = worker; i < trajs.size(); i += threads) {
      Rng rng(mix_seed(cfg.rng_seed, i));
      ProtectedPair pair;
      pair.original = trajs[i];
      pair.mechanism = cfg;
      if (cfg.kind == Kind::CNoise) {
        pair.protected_traj = cnoise(trajs[i], cfg, ref, rng);
      } else {
        SddStats s;
        pair.protected_traj = sdd(trajs[i], cfg, ref, rng, &s);
        restart_counts[worker] += s.restarts;
      }
      out[i] = std::move(pair);
    }
  };

  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  if (stats) {
    for (std::size_t c : restart_counts) stats->sdd_restarts += c;
  }
  return out;
}

}  // namespace trajlab::mech
