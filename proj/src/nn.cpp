#include "trajlab/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "trajlab/geo.hpp"

namespace trajlab::nn {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

bool any_active(const Tensor& mask, std::size_t t) {
  for (std::size_t b = 0; b < mask.dim(0); ++b) {
    if (mask(b, t) != 0.0) return true;
  }
  return false;
}

}  // namespace

void ensure_finite(const Tensor& t, const char* what) {
  const double* p = t.data();
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(p[i])) {
      throw std::runtime_error(std::string(what) + ": non-finite value");
    }
  }
}

void ensure_finite(const Mat& m, const char* what) {
  if (!m.allFinite()) {
    throw std::runtime_error(std::string(what) + ": non-finite value");
  }
}

void zero_grads(std::span<Param* const> params) {
  for (Param* p : params) p->grad.setZero();
}

void glorot_uniform(Mat& w, Rng& rng) {
  const double limit =
      std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      w(i, j) = rng.uniform(-limit, limit);
    }
  }
}

void orthogonal_gate_blocks(Mat& w, std::size_t units, Rng& rng) {
  const auto u = static_cast<Eigen::Index>(units);
  if (w.rows() != u || w.cols() != 4 * u) {
    throw std::invalid_argument("orthogonal_gate_blocks: expected (units, 4*units)");
  }
  for (int gate = 0; gate < 4; ++gate) {
    Eigen::MatrixXd a(u, u);
    for (Eigen::Index i = 0; i < u; ++i) {
      for (Eigen::Index j = 0; j < u; ++j) a(i, j) = rng.normal();
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(u, u);
    const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < u; ++j) {
      if (r(j, j) < 0.0) q.col(j) = -q.col(j);
    }
    w.block(0, gate * u, u, u) = q;
  }
}

std::vector<std::size_t> mask_lengths(const Tensor& mask) {
  if (mask.rank() != 2) throw std::invalid_argument("mask must be rank 2");
  std::vector<std::size_t> lens(mask.dim(0), 0);
  for (std::size_t b = 0; b < mask.dim(0); ++b) {
    std::size_t t = 0;
    while (t < mask.dim(1) && mask(b, t) != 0.0) ++t;
    lens[b] = t;
    for (; t < mask.dim(1); ++t) {
      if (mask(b, t) != 0.0) {
        throw std::invalid_argument("mask must be a contiguous prefix per sequence");
      }
    }
  }
  return lens;
}

// ---------------------------------------------------------------------------
// Dense

Dense::Dense(std::string name, std::size_t in, std::size_t out, Rng& rng)
    : w_(name + ".W", in, out), b_(name + ".b", 1, out) {
  glorot_uniform(w_.value, rng);
}

Mat Dense::forward(const Mat& x) {
  if (x.cols() != w_.value.rows()) throw std::invalid_argument("dense: shape mismatch");
  x_ = x;
  Mat y = x * w_.value;
  y.rowwise() += b_.value.row(0);
  ensure_finite(y, "dense forward");
  return y;
}

Mat Dense::backward(const Mat& dy) {
  if (dy.rows() != x_.rows() || dy.cols() != w_.value.cols()) {
    throw std::invalid_argument("dense backward: shape mismatch");
  }
  w_.grad += x_.transpose() * dy;
  b_.grad.row(0) += dy.colwise().sum();
  Mat dx = dy * w_.value.transpose();
  ensure_finite(dx, "dense backward");
  return dx;
}

void Dense::collect(std::vector<Param*>& out) {
  out.push_back(&w_);
  out.push_back(&b_);
}

// ---------------------------------------------------------------------------
// activations

Tensor relu(const Tensor& x) {
  Tensor y = x;
  double* p = y.data();
  for (std::size_t i = 0; i < y.size(); ++i) p[i] = p[i] > 0.0 ? p[i] : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& dy, const Tensor& x) {
  if (!dy.same_shape(x)) throw std::invalid_argument("relu backward: shape mismatch");
  Tensor dx = dy;
  double* d = dx.data();
  const double* xv = x.data();
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (xv[i] <= 0.0) d[i] = 0.0;  // relu'(0) := 0
  }
  return dx;
}

Tensor tanh_forward(const Tensor& x) {
  Tensor y = x;
  double* p = y.data();
  for (std::size_t i = 0; i < y.size(); ++i) p[i] = std::tanh(p[i]);
  return y;
}

Tensor tanh_backward(const Tensor& dy, const Tensor& y) {
  if (!dy.same_shape(y)) throw std::invalid_argument("tanh backward: shape mismatch");
  Tensor dx = dy;
  double* d = dx.data();
  const double* yv = y.data();
  for (std::size_t i = 0; i < dx.size(); ++i) d[i] *= 1.0 - yv[i] * yv[i];
  return dx;
}

// ---------------------------------------------------------------------------
// TimeSharedDense

TimeSharedDense::TimeSharedDense(std::string name, std::size_t in, std::size_t out,
                                 Rng& rng)
    : w_(name + ".W", in, out), b_(name + ".b", 1, out) {
  glorot_uniform(w_.value, rng);
}

Tensor TimeSharedDense::forward(const Tensor& x, const Tensor& mask) {
  if (x.rank() != 3 || x.dim(2) != static_cast<std::size_t>(w_.value.rows()) ||
      mask.dim(0) != x.dim(0) || mask.dim(1) != x.dim(1)) {
    throw std::invalid_argument("time_shared: shape mismatch");
  }
  x_ = x;
  mask_ = mask;
  const std::size_t B = x.dim(0), T = x.dim(1);
  const std::size_t out_dim = static_cast<std::size_t>(w_.value.cols());
  Tensor y(B, T, out_dim);
  for (std::size_t t = 0; t < T; ++t) {
    if (!any_active(mask, t)) continue;
    Mat yt = x.step(t) * w_.value;
    yt.rowwise() += b_.value.row(0);
    for (std::size_t b = 0; b < B; ++b) {
      if (mask(b, t) == 0.0) yt.row(static_cast<Eigen::Index>(b)).setZero();
    }
    y.step(t) = yt;
  }
  ensure_finite(y, "time_shared forward");
  return y;
}

Tensor TimeSharedDense::backward(const Tensor& dy) {
  const std::size_t B = x_.dim(0), T = x_.dim(1);
  if (dy.dim(0) != B || dy.dim(1) != T ||
      dy.dim(2) != static_cast<std::size_t>(w_.value.cols())) {
    throw std::invalid_argument("time_shared backward: shape mismatch");
  }
  Tensor dx(B, T, x_.dim(2));
  for (std::size_t t = 0; t < T; ++t) {
    if (!any_active(mask_, t)) continue;
    Mat dyt = dy.step(t);
    for (std::size_t b = 0; b < B; ++b) {
      if (mask_(b, t) == 0.0) dyt.row(static_cast<Eigen::Index>(b)).setZero();
    }
    w_.grad += Mat(x_.step(t)).transpose() * dyt;
    b_.grad.row(0) += dyt.colwise().sum();
    dx.step(t) = dyt * w_.value.transpose();
  }
  ensure_finite(dx, "time_shared backward");
  return dx;
}

void TimeSharedDense::collect(std::vector<Param*>& out) {
  out.push_back(&w_);
  out.push_back(&b_);
}

// ---------------------------------------------------------------------------
// Lstm

Lstm::Lstm(std::string name, std::size_t input_dim, std::size_t units, Rng& rng)
    : in_(input_dim),
      units_(units),
      wx_(name + ".Wx", input_dim, 4 * units),
      wh_(name + ".Wh", units, 4 * units),
      b_(name + ".b", 1, 4 * units) {
  glorot_uniform(wx_.value, rng);
  orthogonal_gate_blocks(wh_.value, units, rng);
  // forget gate bias 1 (block order i f g o)
  for (std::size_t j = 0; j < units; ++j) {
    b_.value(0, static_cast<Eigen::Index>(units + j)) = 1.0;
  }
}

Tensor Lstm::forward(const Tensor& x, const Tensor& mask) {
  if (x.rank() != 3 || x.dim(2) != in_ || mask.dim(0) != x.dim(0) ||
      mask.dim(1) != x.dim(1)) {
    throw std::invalid_argument("lstm: shape mismatch");
  }
  const std::size_t B = x.dim(0), T = x.dim(1), U = units_;
  x_ = x;
  mask_ = mask;
  z_ = Tensor(B, T, 4 * U);
  c_ = Tensor(B, T, U);
  h_ = Tensor(B, T, U);
  Tensor out(B, T, U);

  Mat h_prev = Mat::Zero(B, U);
  Mat c_prev = Mat::Zero(B, U);
  for (std::size_t t = 0; t < T; ++t) {
    if (!any_active(mask, t)) {
      h_.step(t) = h_prev;
      c_.step(t) = c_prev;
      continue;
    }
    Mat z = x.step(t) * wx_.value + h_prev * wh_.value;
    z.rowwise() += b_.value.row(0);
    z_.step(t) = z;
    for (std::size_t b = 0; b < B; ++b) {
      if (mask(b, t) == 0.0) continue;
      const auto bi = static_cast<Eigen::Index>(b);
      for (std::size_t j = 0; j < U; ++j) {
        const auto ji = static_cast<Eigen::Index>(j);
        const double ig = sigmoid(z(bi, ji));
        const double fg = sigmoid(z(bi, ji + static_cast<Eigen::Index>(U)));
        const double gg = std::tanh(z(bi, ji + static_cast<Eigen::Index>(2 * U)));
        const double og = sigmoid(z(bi, ji + static_cast<Eigen::Index>(3 * U)));
        const double cv = fg * c_prev(bi, ji) + ig * gg;
        const double hv = og * std::tanh(cv);
        c_prev(bi, ji) = cv;
        h_prev(bi, ji) = hv;
        out(b, t, j) = hv;
      }
    }
    h_.step(t) = h_prev;
    c_.step(t) = c_prev;
  }
  ensure_finite(out, "lstm forward");
  return out;
}

Tensor Lstm::backward(const Tensor& dy) {
  const std::size_t B = x_.dim(0), T = x_.dim(1), U = units_;
  if (dy.dim(0) != B || dy.dim(1) != T || dy.dim(2) != U) {
    throw std::invalid_argument("lstm backward: shape mismatch");
  }
  Tensor dx(B, T, in_);
  Mat dh_next = Mat::Zero(B, U);
  Mat dc_next = Mat::Zero(B, U);
  Mat dz(B, 4 * U);

  for (std::size_t t = T; t-- > 0;) {
    if (!any_active(mask_, t)) continue;  // dy rows are zero, carries unchanged
    dz.setZero();
    for (std::size_t b = 0; b < B; ++b) {
      const auto bi = static_cast<Eigen::Index>(b);
      if (mask_(b, t) == 0.0) continue;  // pass dh/dc straight through
      for (std::size_t j = 0; j < U; ++j) {
        const auto ji = static_cast<Eigen::Index>(j);
        const double z_i = z_(b, t, j);
        const double z_f = z_(b, t, U + j);
        const double z_g = z_(b, t, 2 * U + j);
        const double z_o = z_(b, t, 3 * U + j);
        const double ig = sigmoid(z_i);
        const double fg = sigmoid(z_f);
        const double gg = std::tanh(z_g);
        const double og = sigmoid(z_o);
        const double cv = c_(b, t, j);
        const double tc = std::tanh(cv);
        const double c_before = t > 0 ? c_(b, t - 1, j) : 0.0;

        const double dh = dy(b, t, j) + dh_next(bi, ji);
        const double dct = dh * og * (1.0 - tc * tc) + dc_next(bi, ji);
        const double d_o = dh * tc;
        const double d_i = dct * gg;
        const double d_f = dct * c_before;
        const double d_g = dct * ig;

        dz(bi, ji) = d_i * ig * (1.0 - ig);
        dz(bi, ji + static_cast<Eigen::Index>(U)) = d_f * fg * (1.0 - fg);
        dz(bi, ji + static_cast<Eigen::Index>(2 * U)) = d_g * (1.0 - gg * gg);
        dz(bi, ji + static_cast<Eigen::Index>(3 * U)) = d_o * og * (1.0 - og);
        dc_next(bi, ji) = dct * fg;
      }
    }
    // parameter gradients; masked rows of dz are zero
    Mat h_before = t > 0 ? Mat(h_.step(t - 1)) : Mat(Mat::Zero(B, U));
    wx_.grad += Mat(x_.step(t)).transpose() * dz;
    wh_.grad += h_before.transpose() * dz;
    b_.grad.row(0) += dz.colwise().sum();
    dx.step(t) = dz * wx_.value.transpose();
    const Mat dh_from_gates = dz * wh_.value.transpose();
    for (std::size_t b = 0; b < B; ++b) {
      // masked rows keep their carried dh/dc
      if (mask_(b, t) != 0.0) {
        const auto bi = static_cast<Eigen::Index>(b);
        dh_next.row(bi) = dh_from_gates.row(bi);
      }
    }
  }
  ensure_finite(dx, "lstm backward");
  return dx;
}

void Lstm::collect(std::vector<Param*>& out) {
  out.push_back(&wx_);
  out.push_back(&wh_);
  out.push_back(&b_);
}

// ---------------------------------------------------------------------------
// BiLstm

BiLstm::BiLstm(std::string name, std::size_t input_dim, std::size_t units, Rng& rng)
    : fwd_(name + ".fwd", input_dim, units, rng),
      bwd_(name + ".bwd", input_dim, units, rng) {}

Tensor BiLstm::reverse_within_length(const Tensor& x) const {
  Tensor r(x.dim(0), x.dim(1), x.dim(2));
  for (std::size_t b = 0; b < x.dim(0); ++b) {
    const std::size_t len = lens_[b];
    for (std::size_t t = 0; t < len; ++t) {
      for (std::size_t f = 0; f < x.dim(2); ++f) {
        r(b, t, f) = x(b, len - 1 - t, f);
      }
    }
  }
  return r;
}

Tensor BiLstm::forward(const Tensor& x, const Tensor& mask) {
  lens_ = mask_lengths(mask);
  const Tensor yf = fwd_.forward(x, mask);
  const Tensor yb_rev = bwd_.forward(reverse_within_length(x), mask);
  const Tensor yb = reverse_within_length(yb_rev);
  const std::size_t U = fwd_.units();
  Tensor out(x.dim(0), x.dim(1), 2 * U);
  for (std::size_t b = 0; b < x.dim(0); ++b) {
    for (std::size_t t = 0; t < x.dim(1); ++t) {
      for (std::size_t j = 0; j < U; ++j) {
        out(b, t, j) = yf(b, t, j);
        out(b, t, U + j) = yb(b, t, j);
      }
    }
  }
  return out;
}

Tensor BiLstm::backward(const Tensor& dy) {
  const std::size_t U = fwd_.units();
  const std::size_t B = dy.dim(0), T = dy.dim(1);
  Tensor dyf(B, T, U), dyb(B, T, U);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t j = 0; j < U; ++j) {
        dyf(b, t, j) = dy(b, t, j);
        dyb(b, t, j) = dy(b, t, U + j);
      }
    }
  }
  Tensor dx = fwd_.backward(dyf);
  const Tensor dxr = bwd_.backward(reverse_within_length(dyb));
  const Tensor dxb = reverse_within_length(dxr);
  double* d = dx.data();
  const double* s = dxb.data();
  for (std::size_t i = 0; i < dx.size(); ++i) d[i] += s[i];
  return dx;
}

void BiLstm::collect(std::vector<Param*>& out) {
  fwd_.collect(out);
  bwd_.collect(out);
}

// ---------------------------------------------------------------------------
// Adam

void Adam::step(std::span<Param* const> params) {
  if (m_.empty()) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const Param* p : params) {
      m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (m_.size() != params.size()) {
    throw std::invalid_argument("adam: parameter list changed size");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = *params[i];
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * p.grad;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -=
        cfg_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps_hat);
    ensure_finite(p.value, "adam step");
  }
}

// ---------------------------------------------------------------------------
// losses

LossResult haversine_mae_loss(const Tensor& pred, const Tensor& target,
                              const Tensor& mask, const CoordScaling& sc) {
  if (!pred.same_shape(target) || pred.rank() != 3 || pred.dim(2) != 2 ||
      mask.dim(0) != pred.dim(0) || mask.dim(1) != pred.dim(1)) {
    throw std::invalid_argument("haversine_mae_loss: shape mismatch");
  }
  constexpr double kDeg2Rad = geo::kPi / 180.0;
  const double R = geo::kEarthRadiusM;

  LossResult res;
  res.grad = Tensor(pred.dim(0), pred.dim(1), 2);
  double sum = 0.0;
  std::size_t count = 0;
  struct Cell {
    std::size_t b, t;
    double glat, glon;
  };
  std::vector<Cell> cells;
  for (std::size_t t = 0; t < pred.dim(1); ++t) {
    for (std::size_t b = 0; b < pred.dim(0); ++b) {
      if (mask(b, t) == 0.0) continue;
      const double plat = sc.lat0 + pred(b, t, 0) * sc.scale_lat;
      const double plon = sc.lon0 + pred(b, t, 1) * sc.scale_lon;
      const double tlat = sc.lat0 + target(b, t, 0) * sc.scale_lat;
      const double tlon = sc.lon0 + target(b, t, 1) * sc.scale_lon;
      if (!geo::GeoPoint{plat, plon}.valid() || !geo::GeoPoint{tlat, tlon}.valid()) {
        throw std::domain_error(
            "haversine_mae_loss: invalid decoded coordinates, use mse_loss");
      }
      const double phi1 = plat * kDeg2Rad;
      const double phi2 = tlat * kDeg2Rad;
      const double dphi = (tlat - plat) * kDeg2Rad;
      const double dlam = (tlon - plon) * kDeg2Rad;
      const double sp = std::sin(0.5 * dphi);
      const double sl = std::sin(0.5 * dlam);
      const double cos1 = std::cos(phi1);
      const double cos2 = std::cos(phi2);
      double a = sp * sp + cos1 * cos2 * sl * sl;
      a = std::clamp(a, 0.0, 1.0);
      const double dist = 2.0 * R * std::asin(std::sqrt(a));
      sum += dist;
      ++count;
      double glat = 0.0, glon = 0.0;
      if (a > 0.0 && a < 1.0) {
        const double dd_da = R / std::sqrt(a * (1.0 - a));
        // d a / d phi1 and d a / d lam1 (prediction coordinates)
        const double da_dphi1 =
            -0.5 * std::sin(dphi) - std::sin(phi1) * cos2 * sl * sl;
        const double da_dlam1 = -0.5 * cos1 * cos2 * std::sin(dlam);
        glat = dd_da * da_dphi1 * kDeg2Rad * sc.scale_lat;
        glon = dd_da * da_dlam1 * kDeg2Rad * sc.scale_lon;
      }
      cells.push_back({b, t, glat, glon});
    }
  }
  res.count = count;
  if (count == 0) return res;
  res.loss = sum / static_cast<double>(count);
  const double inv = 1.0 / static_cast<double>(count);
  for (const Cell& c : cells) {
    res.grad(c.b, c.t, 0) = c.glat * inv;
    res.grad(c.b, c.t, 1) = c.glon * inv;
  }
  ensure_finite(res.grad, "haversine_mae_loss grad");
  return res;
}

LossResult mse_loss(const Tensor& pred, const Tensor& target, const Tensor& mask) {
  if (!pred.same_shape(target) || pred.rank() != 3 || mask.dim(0) != pred.dim(0) ||
      mask.dim(1) != pred.dim(1)) {
    throw std::invalid_argument("mse_loss: shape mismatch");
  }
  LossResult res;
  res.grad = Tensor(pred.dim(0), pred.dim(1), pred.dim(2));
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < pred.dim(1); ++t) {
    for (std::size_t b = 0; b < pred.dim(0); ++b) {
      if (mask(b, t) == 0.0) continue;
      for (std::size_t f = 0; f < pred.dim(2); ++f) {
        const double e = pred(b, t, f) - target(b, t, f);
        sum += e * e;
        ++count;
      }
    }
  }
  res.count = count;
  if (count == 0) return res;
  res.loss = sum / static_cast<double>(count);
  const double scale = 2.0 / static_cast<double>(count);
  for (std::size_t t = 0; t < pred.dim(1); ++t) {
    for (std::size_t b = 0; b < pred.dim(0); ++b) {
      if (mask(b, t) == 0.0) continue;
      for (std::size_t f = 0; f < pred.dim(2); ++f) {
        res.grad(b, t, f) = scale * (pred(b, t, f) - target(b, t, f));
      }
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// gradient check

GradCheckReport grad_check(std::span<Param* const> params,
                           const std::function<double()>& compute_loss_and_grads,
                           double step) {
  return grad_check(params, compute_loss_and_grads, std::span<const double>(&step, 1));
}

GradCheckReport grad_check(std::span<Param* const> params,
                           const std::function<double()>& compute_loss_and_grads,
                           std::span<const double> steps) {
  if (steps.empty()) throw std::invalid_argument("grad_check: no steps given");
  compute_loss_and_grads();
  std::vector<Mat> analytic;
  analytic.reserve(params.size());
  for (const Param* p : params) analytic.push_back(p->grad);

  GradCheckReport report;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = *params[i];
    for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < p.value.cols(); ++c) {
        const double saved = p.value(r, c);
        const double a = analytic[i](r, c);
        double rel = std::numeric_limits<double>::infinity();
        for (const double step : steps) {
          p.value(r, c) = saved + step;
          const double lp = compute_loss_and_grads();
          p.value(r, c) = saved - step;
          const double lm = compute_loss_and_grads();
          p.value(r, c) = saved;
          const double numeric = (lp - lm) / (2.0 * step);
          rel = std::min(rel, std::fabs(a - numeric) /
                                  std::max(1e-8, std::fabs(a) + std::fabs(numeric)));
        }
        if (rel > report.max_rel_err) {
          report.max_rel_err = rel;
          report.worst_param = p.name + "(" + std::to_string(r) + "," +
                               std::to_string(c) + ")";
        }
      }
    }
  }
  // leave analytic gradients in place for the caller
  compute_loss_and_grads();
  return report;
}

}  // namespace trajlab::nn
