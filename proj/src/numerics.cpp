#include "dclr/numerics.hpp"

#include <cmath>

#include "dclr/errors.hpp"

namespace dclr::numerics {
namespace {

std::string shape_str(const Mat& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

void require_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ContractError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---------------------------------------------------------------------------
// ParamStore

void ParamStore::add(const std::string& name, Mat value) {
  if (!entries_.emplace(name, std::move(value)).second) {
    throw ContractError("parameter '" + name + "' registered twice");
  }
}

void ParamStore::set(const std::string& name, Mat value) {
  Mat& slot = mutable_at(name);
  if (slot.rows() != value.rows() || slot.cols() != value.cols()) {
    throw ContractError("parameter '" + name + "' is " + shape_str(slot) + ", got " + shape_str(value));
  }
  slot = std::move(value);
}

const Mat& ParamStore::at(std::string_view name) const {
  const auto it = entries_.find(name);
  if (it == entries_.end()) throw ContractError("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

Mat& ParamStore::mutable_at(std::string_view name) {
  const auto it = entries_.find(name);
  if (it == entries_.end()) throw ContractError("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, m] : entries_) n += static_cast<std::size_t>(m.size());
  return n;
}

bool ParamStore::congruent(const ParamStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  auto it = other.entries_.begin();
  for (const auto& [name, m] : entries_) {
    if (it->first != name || it->second.rows() != m.rows() || it->second.cols() != m.cols()) return false;
    ++it;
  }
  return true;
}

ParamStore ParamStore::zeros_like() const {
  ParamStore z;
  for (const auto& [name, m] : entries_) z.add(name, Mat::Zero(m.rows(), m.cols()));
  return z;
}

ParamStore ParamStore::subset(std::span<const std::string> names) const {
  ParamStore out;
  for (const auto& n : names) out.add(n, at(n));
  return out;
}

bool ParamStore::operator==(const ParamStore& other) const {
  if (!congruent(other)) return false;
  auto it = other.entries_.begin();
  for (const auto& [_, m] : entries_) {
    if (m != it->second) return false;
    ++it;
  }
  return true;
}

ParamStore axpy(const ParamStore& a, double s, const ParamStore& b) {
  if (!a.congruent(b)) throw ContractError("axpy: parameter stores are not congruent");
  ParamStore out;
  auto it = b.entries().begin();
  for (const auto& [name, m] : a.entries()) {
    out.add(name, m + s * it->second);
    ++it;
  }
  return out;
}

ParamStore scaled(const ParamStore& a, double s) {
  ParamStore out;
  for (const auto& [name, m] : a.entries()) out.add(name, s * m);
  return out;
}

void require_finite(const ParamStore& p, const std::string& what) {
  for (const auto& [name, m] : p.entries()) {
    if (!m.allFinite()) throw NumericError(name, what + ": non-finite values");
  }
}

ParamStore sgd_step(const ParamStore& p, const GradStore& g, double lr) {
  if (!(lr >= 0.0)) throw ContractError("sgd_step: learning rate must be >= 0");
  if (!p.congruent(g)) throw ContractError("sgd_step: gradient keys/shapes do not match parameters");
  return axpy(p, -lr, g);
}

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  throw ConfigError("unknown optimizer '" + name + "' (expected sgd or adam)");
}

std::string optimizer_name(OptimizerKind kind) { return kind == OptimizerKind::kAdam ? "adam" : "sgd"; }

ParamStore Optimizer::step(const ParamStore& p, const GradStore& g) {
  ++t_;
  if (cfg_.kind == OptimizerKind::kSgd) return sgd_step(p, g, cfg_.lr);
  if (!(cfg_.lr >= 0.0)) throw ContractError("adam: learning rate must be >= 0");
  if (!p.congruent(g)) throw ContractError("adam: gradient keys/shapes do not match parameters");
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  ParamStore out = p;
  for (const auto& [name, grad] : g.entries()) {
    if (!m_.contains(name)) {
      m_.add(name, Mat::Zero(grad.rows(), grad.cols()));
      v_.add(name, Mat::Zero(grad.rows(), grad.cols()));
    }
    Mat& m = m_.mutable_at(name);
    Mat& v = v_.mutable_at(name);
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * grad;
    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * grad.cwiseProduct(grad);
    const Mat update = (m / c1).array() / ((v / c2).array().sqrt() + cfg_.eps);
    out.mutable_at(name) -= cfg_.lr * update;
  }
  return out;
}

Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
  if (rate == 0.0) return Mat::Ones(rows, cols);
  std::bernoulli_distribution keep(1.0 - rate);
  const double s = 1.0 / (1.0 - rate);
  Mat mask(rows, cols);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? s : 0.0;
  return mask;
}

nlohmann::json to_json(const ParamStore& p) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, m] : p.entries()) {
    std::vector<double> values(m.data(), m.data() + m.size());
    j[name] = {{"shape", {m.rows(), m.cols()}}, {"values", std::move(values)}};
  }
  return j;
}

ParamStore param_store_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ContractError("parameter store JSON must be an object");
  ParamStore p;
  for (const auto& [name, entry] : j.items()) {
    const auto rows = entry.at("shape").at(0).get<Eigen::Index>();
    const auto cols = entry.at("shape").at(1).get<Eigen::Index>();
    const auto& values = entry.at("values");
    if (static_cast<Eigen::Index>(values.size()) != rows * cols) {
      throw ContractError("parameter '" + name + "': value count does not match shape");
    }
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = values[static_cast<std::size_t>(i)].get<double>();
    p.add(name, std::move(m));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Tape

const Mat& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Mat value) {
  nodes_.push_back(Node{std::move(value), nullptr, {}, false, {}, {}});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::param(const std::string& name, const Mat& value) {
  nodes_.push_back(Node{{}, &value, {}, false, {}, name});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::push(Mat value, Backward backward) {
  nodes_.push_back(Node{std::move(value), nullptr, {}, false, std::move(backward), {}});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

const Mat& Tape::value(int id) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  return n.ref ? *n.ref : n.value;
}

Mat& Tape::grad(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.has_grad) {
    const Mat& v = n.ref ? *n.ref : n.value;
    n.grad = Mat::Zero(v.rows(), v.cols());
    n.has_grad = true;
  }
  return n.grad;
}

double Tape::backward(Var loss) {
  if (loss.tape_ != this) throw ContractError("backward: loss belongs to another tape");
  const Mat& v = value(loss.id_);
  if (v.rows() != 1 || v.cols() != 1) throw ContractError("backward: loss must be 1x1, got " + shape_str(v));
  grad(loss.id_)(0, 0) = 1.0;
  for (int id = loss.id_; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.has_grad && n.backward) n.backward(*this, n.grad, n.value);
  }
  return v(0, 0);
}

GradStore Tape::gradients(const ParamStore& like) const {
  GradStore g = like.zeros_like();
  for (const Node& n : nodes_) {
    if (n.param.empty() || !n.has_grad || !g.contains(n.param)) continue;
    Mat& slot = g.mutable_at(n.param);
    require_same_shape(slot, n.grad, "gradients");
    slot += n.grad;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Ops

Var matmul(Var a, Var b) {
  const Mat& A = a.value();
  const Mat& B = b.value();
  if (A.cols() != B.rows()) throw ContractError("matmul: " + shape_str(A) + " * " + shape_str(B));
  const int ia = a.id(), ib = b.id();
  return a.tape()->push(A * B, [ia, ib](Tape& t, const Mat& g, const Mat&) {
    t.grad(ia).noalias() += g * t.value(ib).transpose();
    t.grad(ib).noalias() += t.value(ia).transpose() * g;
  });
}

Var transpose(Var a) {
  const int ia = a.id();
  return a.tape()->push(a.value().transpose(), [ia](Tape& t, const Mat& g, const Mat&) { t.grad(ia) += g.transpose(); });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  const int ia = a.id(), ib = b.id();
  return a.tape()->push(a.value() + b.value(), [ia, ib](Tape& t, const Mat& g, const Mat&) {
    t.grad(ia) += g;
    t.grad(ib) += g;
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  const int ia = a.id(), ib = b.id();
  return a.tape()->push(a.value() - b.value(), [ia, ib](Tape& t, const Mat& g, const Mat&) {
    t.grad(ia) += g;
    t.grad(ib) -= g;
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  const int ia = a.id(), ib = b.id();
  return a.tape()->push(a.value().cwiseProduct(b.value()), [ia, ib](Tape& t, const Mat& g, const Mat&) {
    t.grad(ia) += g.cwiseProduct(t.value(ib));
    t.grad(ib) += g.cwiseProduct(t.value(ia));
  });
}

Var scale(Var a, double s) {
  const int ia = a.id();
  return a.tape()->push(s * a.value(), [ia, s](Tape& t, const Mat& g, const Mat&) { t.grad(ia) += s * g; });
}

Var mul_scalar(Var a, Var s) {
  if (s.rows() != 1 || s.cols() != 1) throw ContractError("mul_scalar: scalar must be 1x1");
  const int ia = a.id(), is = s.id();
  return a.tape()->push(a.value() * s.scalar(), [ia, is](Tape& t, const Mat& g, const Mat&) {
    t.grad(ia) += g * t.value(is)(0, 0);
    t.grad(is)(0, 0) += g.cwiseProduct(t.value(ia)).sum();
  });
}

Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ContractError("add_row: row " + shape_str(row.value()) + " vs " + shape_str(a.value()));
  }
  const int ia = a.id(), ir = row.id();
  Mat out = a.value();
  out.rowwise() += row.value().row(0);
  return a.tape()->push(std::move(out), [ia, ir](Tape& t, const Mat& g, const Mat&) {
    t.grad(ia) += g;
    t.grad(ir) += g.colwise().sum();
  });
}

Var sigmoid(Var a) {
  const int ia = a.id();
  Mat y = a.value().unaryExpr([](double x) { return stable_sigmoid(x); });
  return a.tape()->push(std::move(y), [ia](Tape& t, const Mat& g, const Mat& s) {
    t.grad(ia) += g.cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix()));
  });
}

Var exp(Var a) {
  const int ia = a.id();
  return a.tape()->push(a.value().array().exp().matrix(), [ia](Tape& t, const Mat& g, const Mat& y) {
    t.grad(ia) += g.cwiseProduct(y);
  });
}

Var log(Var a) {
  const int ia = a.id();
  return a.tape()->push(a.value().array().log().matrix(), [ia](Tape& t, const Mat& g, const Mat&) {
    t.grad(ia) += g.cwiseQuotient(t.value(ia));
  });
}

Var clamp(Var a, double lo, double hi) {
  const int ia = a.id();
  return a.tape()->push(a.value().cwiseMax(lo).cwiseMin(hi), [ia, lo, hi](Tape& t, const Mat& g, const Mat&) {
    const Mat& x = t.value(ia);
    Mat& gx = t.grad(ia);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double v = x.data()[i];
      if (v >= lo && v <= hi) gx.data()[i] += g.data()[i];
    }
  });
}

Mat softmax_rows(const Mat& a) {
  Mat y(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double m = a.row(r).maxCoeff();
    y.row(r) = (a.row(r).array() - m).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  return y;
}

Mat softmax_cols(const Mat& a) {
  Mat y(a.rows(), a.cols());
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    const double m = a.col(c).maxCoeff();
    y.col(c) = (a.col(c).array() - m).exp().matrix();
    y.col(c) /= y.col(c).sum();
  }
  return y;
}

Var softmax_rows(Var a) {
  const int ia = a.id();
  return a.tape()->push(softmax_rows(a.value()), [ia](Tape& t, const Mat& g, const Mat& y) {
    const Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
    Mat d = g;
    d.colwise() -= dot;
    t.grad(ia) += y.cwiseProduct(d);
  });
}

Var softmax_cols(Var a) {
  const int ia = a.id();
  return a.tape()->push(softmax_cols(a.value()), [ia](Tape& t, const Mat& g, const Mat& y) {
    const Eigen::RowVectorXd dot = g.cwiseProduct(y).colwise().sum();
    Mat d = g;
    d.rowwise() -= dot;
    t.grad(ia) += y.cwiseProduct(d);
  });
}

Var gather_rows(Var table, std::span<const int> rows) {
  const Mat& T = table.value();
  Mat out(static_cast<Eigen::Index>(rows.size()), T.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= T.rows()) {
      throw ContractError("gather_rows: index " + std::to_string(rows[i]) + " outside " + shape_str(T));
    }
    out.row(static_cast<Eigen::Index>(i)) = T.row(rows[i]);
  }
  const int it = table.id();
  return table.tape()->push(std::move(out), [it, idx = std::vector<int>(rows.begin(), rows.end())](
                                                Tape& t, const Mat& g, const Mat&) {
    Mat& gt = t.grad(it);
    for (std::size_t i = 0; i < idx.size(); ++i) gt.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

Var slice_rows(Var a, Eigen::Index begin, Eigen::Index count) {
  return slice_block(a, begin, 0, count, a.cols());
}

Var slice_block(Var a, Eigen::Index row, Eigen::Index col, Eigen::Index rows, Eigen::Index cols) {
  const Mat& A = a.value();
  if (row < 0 || col < 0 || rows < 0 || cols < 0 || row + rows > A.rows() || col + cols > A.cols()) {
    throw ContractError("slice: block outside " + shape_str(A));
  }
  const int ia = a.id();
  return a.tape()->push(A.block(row, col, rows, cols), [ia, row, col, rows, cols](Tape& t, const Mat& g, const Mat&) {
    t.grad(ia).block(row, col, rows, cols) += g;
  });
}

Var sum(Var a) {
  const int ia = a.id();
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape()->push(std::move(out), [ia](Tape& t, const Mat& g, const Mat&) { t.grad(ia).array() += g(0, 0); });
}

Var sum_rows(Var a) {
  const int ia = a.id();
  return a.tape()->push(a.value().rowwise().sum(), [ia](Tape& t, const Mat& g, const Mat&) {
    t.grad(ia).colwise() += g.col(0);
  });
}

Var sum_cols(Var a) {
  const int ia = a.id();
  return a.tape()->push(a.value().colwise().sum(), [ia](Tape& t, const Mat& g, const Mat&) {
    t.grad(ia).rowwise() += g.row(0);
  });
}

// ---------------------------------------------------------------------------

Gradient grad(const LossFn& loss_fn, const ParamStore& p) {
  Tape tape;
  Var loss = loss_fn(tape, p);
  const double value = tape.backward(loss);
  if (!std::isfinite(value)) {
    require_finite(p, "loss is non-finite");
    throw NumericError("loss", "loss is non-finite");
  }
  Gradient out{value, tape.gradients(p)};
  require_finite(out.grads, "gradient");
  return out;
}

double evaluate(const LossFn& loss_fn, const ParamStore& p) {
  Tape tape;
  const Var loss = loss_fn(tape, p);
  if (loss.rows() != 1 || loss.cols() != 1) throw ContractError("loss must be 1x1");
  return loss.scalar();
}

}  // namespace dclr::numerics
