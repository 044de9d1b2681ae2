#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace dclr {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Rng = std::mt19937_64;

}  // namespace dclr

namespace dclr::numerics {

// Named dense arrays with shapes fixed at registration.
class ParamStore {
 public:
  void add(const std::string& name, Mat value);
  // Replaces the values of an existing entry; the shape must match.
  void set(const std::string& name, Mat value);

  bool contains(std::string_view name) const { return entries_.find(name) != entries_.end(); }
  const Mat& at(std::string_view name) const;
  Mat& mutable_at(std::string_view name);
  const std::map<std::string, Mat, std::less<>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  // True when both stores hold the same keys with the same shapes.
  bool congruent(const ParamStore& other) const;
  // Zero-valued store with this store's keys and shapes.
  ParamStore zeros_like() const;
  // Keeps only the listed keys.
  ParamStore subset(std::span<const std::string> names) const;

  bool operator==(const ParamStore& other) const;

 private:
  std::map<std::string, Mat, std::less<>> entries_;
};

// Same keys and shapes as the ParamStore it differentiates.
using GradStore = ParamStore;

// this + s * other, per entry.
ParamStore axpy(const ParamStore& a, double s, const ParamStore& b);
ParamStore scaled(const ParamStore& a, double s);

// Throws NumericError naming the first entry that holds a NaN or infinity.
void require_finite(const ParamStore& p, const std::string& what);

ParamStore sgd_step(const ParamStore& p, const GradStore& g, double lr);

enum class OptimizerKind { kSgd, kAdam };

OptimizerKind parse_optimizer(const std::string& name);
std::string optimizer_name(OptimizerKind kind);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgd;
  double lr = 0.002;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Stateful update rule. SGD keeps no state; Adam keeps per-entry moments
// keyed by parameter name, created on first use.
class Optimizer {
 public:
  Optimizer() = default;
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}

  ParamStore step(const ParamStore& p, const GradStore& g);
  const OptimizerConfig& config() const { return cfg_; }
  std::size_t steps() const { return t_; }

 private:
  OptimizerConfig cfg_;
  ParamStore m_;
  ParamStore v_;
  std::size_t t_ = 0;
};

// Inverted-dropout keep mask scaled by 1/(1-rate).
Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng);

nlohmann::json to_json(const ParamStore& p);
ParamStore param_store_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Reverse-mode tape over the primitive set used by the model's losses.

class Tape;

class Var {
 public:
  Var() = default;
  const Mat& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Mat value);
  // The referenced matrix must outlive the tape.
  Var param(const std::string& name, const Mat& value);
  Var param(const ParamStore& store, const std::string& name) { return param(name, store.at(name)); }

  // Runs the backward pass from a 1x1 loss; returns its value.
  double backward(Var loss);
  // Gradients for every entry of `like`; entries the loss never touched are zero.
  GradStore gradients(const ParamStore& like) const;

  // Internal API for the op implementations.
  // upstream: dLoss/dOutput; output: the node's own value.
  using Backward = std::function<void(Tape&, const Mat& upstream, const Mat& output)>;
  Var push(Mat value, Backward backward);
  const Mat& value(int id) const;
  Mat& grad(int id);  // lazily zero-initialised with the node's shape

 private:
  struct Node {
    Mat value;
    const Mat* ref = nullptr;
    Mat grad;
    bool has_grad = false;
    Backward backward;
    std::string param;
  };
  std::vector<Node> nodes_;
};

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);            // elementwise
Var scale(Var a, double s);
Var mul_scalar(Var a, Var s);     // s is 1x1
Var add_row(Var a, Var row);      // row (1xC) broadcast over the rows of a
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
Var clamp(Var a, double lo, double hi);
Var softmax_rows(Var a);          // each row sums to 1
Var softmax_cols(Var a);          // each column sums to 1
Var gather_rows(Var table, std::span<const int> rows);
Var slice_rows(Var a, Eigen::Index begin, Eigen::Index count);
Var slice_block(Var a, Eigen::Index row, Eigen::Index col, Eigen::Index rows, Eigen::Index cols);
Var sum(Var a);                   // 1x1
Var sum_rows(Var a);              // Rx1: each row summed
Var sum_cols(Var a);              // 1xC: each column summed

// Row-wise max-subtracted softmax on plain matrices.
Mat softmax_rows(const Mat& a);
Mat softmax_cols(const Mat& a);

struct Gradient {
  double loss = 0.0;
  GradStore grads;
};

using LossFn = std::function<Var(Tape&, const ParamStore&)>;

// Evaluates loss_fn at p and returns its exact gradient w.r.t. every entry of p.
Gradient grad(const LossFn& loss_fn, const ParamStore& p);
// Forward value only.
double evaluate(const LossFn& loss_fn, const ParamStore& p);

}  // namespace dclr::numerics
