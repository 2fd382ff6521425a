#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "trajlab/rng.hpp"

namespace trajlab::nn {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Mat, 0, Eigen::OuterStride<>>;
using CMatMap = Eigen::Map<const Mat, 0, Eigen::OuterStride<>>;

// Dense row-major f64 array of rank 2 or 3. Batched sequence data is
// (batch, time, features); per-timestep matrix views keep every GEMM shape
// independent of the padded length, which is what makes padding a batch with
// masked steps a bit-exact no-op.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t d0, std::size_t d1) : dims_{d0, d1}, data_(d0 * d1, 0.0) {}
  Tensor(std::size_t d0, std::size_t d1, std::size_t d2)
      : dims_{d0, d1, d2}, data_(d0 * d1 * d2, 0.0) {}

  std::size_t rank() const { return dims_.size(); }
  std::size_t dim(std::size_t i) const { return dims_[i]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * dims_[1] + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * dims_[1] + j]; }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * dims_[1] + j) * dims_[2] + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * dims_[1] + j) * dims_[2] + k];
  }

  // (dim0 x dim2) view of a rank-3 tensor at fixed middle index t
  MatMap step(std::size_t t) {
    return MatMap(data_.data() + t * dims_[2], dims_[0], dims_[2],
                  Eigen::OuterStride<>(static_cast<Eigen::Index>(dims_[1] * dims_[2])));
  }
  CMatMap step(std::size_t t) const {
    return CMatMap(data_.data() + t * dims_[2], dims_[0], dims_[2],
                   Eigen::OuterStride<>(static_cast<Eigen::Index>(dims_[1] * dims_[2])));
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }

 private:
  std::vector<std::size_t> dims_;
  std::vector<double> data_;
};

// Throws std::runtime_error when any element is NaN or infinite.
void ensure_finite(const Tensor& t, const char* what);
void ensure_finite(const Mat& m, const char* what);

// Named weight array with a gradient buffer of identical shape.
struct Param {
  std::string name;
  Mat value;
  Mat grad;

  Param() = default;
  Param(std::string n, std::size_t rows, std::size_t cols)
      : name(std::move(n)), value(Mat::Zero(rows, cols)), grad(Mat::Zero(rows, cols)) {}
};

void zero_grads(std::span<Param* const> params);

void glorot_uniform(Mat& w, Rng& rng);
// Fills w (units x 4*units) with per-gate orthogonal square blocks.
void orthogonal_gate_blocks(Mat& w, std::size_t units, Rng& rng);

// Per-sequence true lengths; throws unless each mask row is a contiguous
// prefix of ones.
std::vector<std::size_t> mask_lengths(const Tensor& mask);

// ---------------------------------------------------------------------------
// layers

class Dense {
 public:
  Dense() = default;
  Dense(std::string name, std::size_t in, std::size_t out, Rng& rng);

  // y = x W + b, x: (batch, in)
  Mat forward(const Mat& x);
  // accumulates dW, db; returns dL/dx
  Mat backward(const Mat& dy);

  Param& weight() { return w_; }
  Param& bias() { return b_; }
  void collect(std::vector<Param*>& out);

 private:
  Param w_, b_;
  Mat x_;
};

// Elementwise activations; backward takes the cached forward input (relu)
// or output (tanh).
Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& dy, const Tensor& x);
Tensor tanh_forward(const Tensor& x);
Tensor tanh_backward(const Tensor& dy, const Tensor& y);

// Shared-weights dense layer applied independently per timestep; masked
// steps produce zeros and receive zero gradient.
class TimeSharedDense {
 public:
  TimeSharedDense() = default;
  TimeSharedDense(std::string name, std::size_t in, std::size_t out, Rng& rng);

  Tensor forward(const Tensor& x, const Tensor& mask);  // (B,T,in) -> (B,T,out)
  Tensor backward(const Tensor& dy);

  Param& weight() { return w_; }
  Param& bias() { return b_; }
  void collect(std::vector<Param*>& out);
  std::size_t input_dim() const { return static_cast<std::size_t>(w_.value.rows()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(w_.value.cols()); }

 private:
  Param w_, b_;
  Tensor x_, mask_;
};

// Single-direction LSTM with gates i,f,o = sigmoid, candidate g = tanh,
// c' = f.c + i.g, h' = o.tanh(c'). At masked steps h and c carry through
// unchanged and the emitted output is zero. Forget-gate bias starts at 1.
class Lstm {
 public:
  Lstm() = default;
  Lstm(std::string name, std::size_t input_dim, std::size_t units, Rng& rng);

  Tensor forward(const Tensor& x, const Tensor& mask);  // (B,T,in) -> (B,T,U)
  Tensor backward(const Tensor& dy);

  void collect(std::vector<Param*>& out);
  std::size_t units() const { return units_; }

 private:
  std::size_t in_ = 0, units_ = 0;
  Param wx_, wh_, b_;  // (in,4U), (U,4U), (1,4U); gate blocks [i f g o]
  Tensor x_, mask_, z_, c_, h_;
};

// Forward pass concatenated with a backward pass over the sequence reversed
// within each row's true length.
class BiLstm {
 public:
  BiLstm() = default;
  BiLstm(std::string name, std::size_t input_dim, std::size_t units, Rng& rng);

  Tensor forward(const Tensor& x, const Tensor& mask);  // (B,T,2U)
  Tensor backward(const Tensor& dy);

  void collect(std::vector<Param*>& out);
  std::size_t units() const { return fwd_.units(); }
  Lstm& forward_cell() { return fwd_; }
  Lstm& backward_cell() { return bwd_; }

 private:
  Tensor reverse_within_length(const Tensor& x) const;
  Lstm fwd_, bwd_;
  std::vector<std::size_t> lens_;
};

// ---------------------------------------------------------------------------
// optimizer

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_hat = 1e-8;
};

class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  void step(std::span<Param* const> params);
  std::size_t steps_taken() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::vector<Mat> m_, v_;
  std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// losses

// Offset/scale pair mapping scaled offsets back to degrees; mirrors the
// encoder configuration.
struct CoordScaling {
  double lat0 = 0.0;
  double lon0 = 0.0;
  double scale_lat = 1.0;
  double scale_lon = 1.0;
};

struct LossResult {
  double loss = 0.0;
  Tensor grad;               // shaped like pred
  std::size_t count = 0;     // unmasked steps (haversine) or entries (mse)
};

// Mean haversine distance in meters over unmasked steps between decoded
// predictions and targets; gradient w.r.t. the scaled offsets. Throws when a
// decoded coordinate leaves the valid range (callers fall back to mse_loss).
LossResult haversine_mae_loss(const Tensor& pred, const Tensor& target,
                              const Tensor& mask, const CoordScaling& sc);

// Mean squared error over unmasked entries in scaled-offset space.
LossResult mse_loss(const Tensor& pred, const Tensor& target, const Tensor& mask);

// ---------------------------------------------------------------------------
// gradient checking

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
};

// Central finite differences with the given step on every parameter;
// compute_loss_and_grads must zero grads, run forward/backward and return the
// loss. Relative error is |a-n| / max(1e-8, |a|+|n|).
GradCheckReport grad_check(std::span<Param* const> params,
                           const std::function<double()>& compute_loss_and_grads,
                           double step = 1e-5);

// As grad_check, but estimates each parameter at several steps and scores it
// by the best-conditioned one. Deep compositions have no single step that is
// simultaneously clear of f64 round-off (small steps) and of curvature error
// (large steps) for every parameter.
GradCheckReport grad_check(std::span<Param* const> params,
                           const std::function<double()>& compute_loss_and_grads,
                           std::span<const double> steps);

}  // namespace trajlab::nn
