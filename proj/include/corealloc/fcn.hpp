#pragma once

// Environment model: fully connected network (ReLU hidden layers, identity
// output) trained by mini-batch gradient descent on mean squared error.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "corealloc/error.hpp"
#include "corealloc/random.hpp"
#include "corealloc/trace.hpp"

namespace corealloc {

struct FcnModel {
  std::vector<std::size_t> sizes;   // input, hidden..., output
  std::vector<Eigen::MatrixXd> W;   // W[l] is sizes[l+1] x sizes[l]
  std::vector<Eigen::VectorXd> b;

  std::size_t layers() const noexcept { return W.size(); }
  std::size_t inputs() const noexcept { return sizes.front(); }
  std::size_t outputs() const noexcept { return sizes.back(); }

  std::size_t parameter_count() const noexcept { return parameter_count(sizes); }

  static std::size_t parameter_count(const std::vector<std::size_t>& sizes) noexcept {
    std::size_t p = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) p += sizes[l] * sizes[l + 1] + sizes[l + 1];
    return p;
  }

  /// Outputs for every row of x (n x p), as an n x q matrix.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const {
    check_arity(x);
    Eigen::MatrixXd a = x.transpose();
    for (std::size_t l = 0; l < W.size(); ++l) {
      Eigen::MatrixXd z = W[l] * a;
      z.colwise() += b[l];
      a = l + 1 < W.size() ? Eigen::MatrixXd(z.cwiseMax(0.0)) : z;
    }
    return a.transpose();
  }

  /// First output column; the models here are single-output.
  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const { return forward(x).col(0); }

  void check_arity(const Eigen::MatrixXd& x) const {
    if (static_cast<std::size_t>(x.cols()) != inputs()) {
      throw DataError("fcn: input has " + std::to_string(x.cols()) + " features, model expects " +
                      std::to_string(inputs()));
    }
  }
};

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero. With
/// zero_output the last layer starts at zero.
inline FcnModel init_fcn(const std::vector<std::size_t>& sizes, std::uint64_t seed, bool zero_output = false) {
  if (sizes.size() < 3) throw DataError("fcn: need input, at least one hidden layer, and output");
  for (auto s : sizes) {
    if (s == 0) throw DataError("fcn: layer widths must be >= 1");
  }
  Rng rng(seed);
  FcnModel m;
  m.sizes = sizes;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const auto in = static_cast<Eigen::Index>(sizes[l]);
    const auto out = static_cast<Eigen::Index>(sizes[l + 1]);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Eigen::MatrixXd w(out, in);
    for (Eigen::Index r = 0; r < out; ++r) {
      for (Eigen::Index c = 0; c < in; ++c) w(r, c) = uniform_real(rng, -bound, bound);
    }
    if (zero_output && l + 2 == sizes.size()) w.setZero();
    m.W.push_back(std::move(w));
    m.b.push_back(Eigen::VectorXd::Zero(out));
  }
  return m;
}

/// Input width, hidden widths, single output.
inline std::vector<std::size_t> fcn_layout(std::size_t inputs, const std::vector<std::size_t>& hidden) {
  std::vector<std::size_t> sizes{inputs};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(1);
  return sizes;
}

struct FcnGradient {
  std::vector<Eigen::MatrixXd> W;
  std::vector<Eigen::VectorXd> b;
};

inline double mse(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target) {
  return (pred - target).squaredNorm() / static_cast<double>(pred.size());
}

/// MSE over all outputs and its gradient with respect to every parameter.
inline double loss_and_gradient(const FcnModel& m, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                                FcnGradient& grad) {
  m.check_arity(x);
  if (y.rows() != x.rows() || static_cast<std::size_t>(y.cols()) != m.outputs()) {
    throw DataError("fcn: target shape does not match inputs/outputs");
  }
  const std::size_t L = m.layers();
  std::vector<Eigen::MatrixXd> acts(L + 1);  // acts[0] = input, acts[l+1] = layer l output
  acts[0] = x.transpose();
  for (std::size_t l = 0; l < L; ++l) {
    Eigen::MatrixXd z = m.W[l] * acts[l];
    z.colwise() += m.b[l];
    acts[l + 1] = l + 1 < L ? Eigen::MatrixXd(z.cwiseMax(0.0)) : z;
  }
  const Eigen::MatrixXd diff = acts[L] - y.transpose();
  const double count = static_cast<double>(diff.size());
  const double loss = diff.squaredNorm() / count;

  grad.W.resize(L);
  grad.b.resize(L);
  Eigen::MatrixXd delta = (2.0 / count) * diff;
  for (std::size_t l = L; l-- > 0;) {
    grad.W[l].noalias() = delta * acts[l].transpose();
    grad.b[l] = delta.rowwise().sum();
    if (l > 0) {
      Eigen::MatrixXd back = m.W[l].transpose() * delta;
      delta = back.cwiseProduct((acts[l].array() > 0.0).cast<double>().matrix());
    }
  }
  return loss;
}

/// All weights then biases, layer by layer, weights row-major.
inline Eigen::VectorXd flatten(const FcnModel& m) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(m.parameter_count()));
  Eigen::Index at = 0;
  for (std::size_t l = 0; l < m.layers(); ++l) {
    for (Eigen::Index r = 0; r < m.W[l].rows(); ++r) {
      for (Eigen::Index c = 0; c < m.W[l].cols(); ++c) out(at++) = m.W[l](r, c);
    }
    for (Eigen::Index r = 0; r < m.b[l].size(); ++r) out(at++) = m.b[l](r);
  }
  return out;
}

inline Eigen::VectorXd flatten(const FcnGradient& g) {
  Eigen::Index total = 0;
  for (std::size_t l = 0; l < g.W.size(); ++l) total += g.W[l].size() + g.b[l].size();
  Eigen::VectorXd out(total);
  Eigen::Index at = 0;
  for (std::size_t l = 0; l < g.W.size(); ++l) {
    for (Eigen::Index r = 0; r < g.W[l].rows(); ++r) {
      for (Eigen::Index c = 0; c < g.W[l].cols(); ++c) out(at++) = g.W[l](r, c);
    }
    for (Eigen::Index r = 0; r < g.b[l].size(); ++r) out(at++) = g.b[l](r);
  }
  return out;
}

inline void unflatten(FcnModel& m, const Eigen::VectorXd& theta) {
  if (static_cast<std::size_t>(theta.size()) != m.parameter_count()) throw DataError("fcn: parameter vector size mismatch");
  Eigen::Index at = 0;
  for (std::size_t l = 0; l < m.layers(); ++l) {
    for (Eigen::Index r = 0; r < m.W[l].rows(); ++r) {
      for (Eigen::Index c = 0; c < m.W[l].cols(); ++c) m.W[l](r, c) = theta(at++);
    }
    for (Eigen::Index r = 0; r < m.b[l].size(); ++r) m.b[l](r) = theta(at++);
  }
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t epochs = 100;
  double learning_rate = 0.005;
  std::uint64_t seed = 0;
  /// Stop after this many epochs without validation improvement; 0 disables.
  std::size_t patience = 0;

  static constexpr double kMinLearningRate = 1e-4;
  static constexpr double kMaxLearningRate = 0.1;

  void validate() const {
    if (batch_size == 0) throw DataError("train: batch_size must be >= 1");
    if (epochs == 0) throw DataError("train: epochs must be >= 1");
    if (!(learning_rate >= kMinLearningRate && learning_rate <= kMaxLearningRate)) {
      throw DataError("train: learning_rate must lie in [1e-4, 0.1]");
    }
  }
};

struct EpochLoss {
  std::size_t epoch = 0;  // 0 is the untrained model
  double train_mse = 0.0;
  double val_mse = 0.0;
};

struct TrainResult {
  FcnModel model;                // best-validation checkpoint
  std::vector<EpochLoss> history;
  std::size_t best_epoch = 0;
  double best_val_mse = 0.0;
};

struct Dataset {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;

  std::size_t rows() const noexcept { return static_cast<std::size_t>(x.rows()); }
};

/// Mini-batch gradient descent with a fixed learning rate; rows are reshuffled
/// every epoch. The checkpoint with the lowest validation MSE is returned
/// (training MSE when `val` is empty; earliest epoch on ties).
inline TrainResult train(FcnModel model, const Dataset& data, const Dataset& val, const TrainConfig& cfg) {
  cfg.validate();
  model.check_arity(data.x);
  if (data.rows() == 0) throw DataError("train: empty training set");
  if (static_cast<Eigen::Index>(data.rows()) != data.y.size()) throw DataError("train: X and y row counts differ");
  const bool has_val = val.rows() > 0;
  if (has_val) {
    model.check_arity(val.x);
    if (static_cast<Eigen::Index>(val.rows()) != val.y.size()) throw DataError("train: validation X and y differ");
  }
  if (model.outputs() != 1) throw DataError("train: single-output models only");

  Rng rng(cfg.seed);
  const std::size_t n = data.rows();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  auto record = [&](std::size_t epoch) {
    EpochLoss e;
    e.epoch = epoch;
    e.train_mse = mse(model.predict(data.x), data.y);
    e.val_mse = has_val ? mse(model.predict(val.x), val.y) : e.train_mse;
    if (!std::isfinite(e.train_mse) || !std::isfinite(e.val_mse)) {
      throw NumericError("training diverged at epoch " + std::to_string(epoch) + " (non-finite loss)");
    }
    return e;
  };

  TrainResult out;
  out.history.push_back(record(0));
  out.model = model;
  out.best_val_mse = out.history.back().val_mse;
  std::size_t since_best = 0;

  FcnGradient grad;
  Eigen::MatrixXd bx;
  Eigen::MatrixXd by;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_in_place(order, rng);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, n - start);
      bx.resize(static_cast<Eigen::Index>(len), data.x.cols());
      by.resize(static_cast<Eigen::Index>(len), 1);
      for (std::size_t i = 0; i < len; ++i) {
        const auto r = static_cast<Eigen::Index>(order[start + i]);
        bx.row(static_cast<Eigen::Index>(i)) = data.x.row(r);
        by(static_cast<Eigen::Index>(i), 0) = data.y(r);
      }
      const double loss = loss_and_gradient(model, bx, by, grad);
      if (!std::isfinite(loss)) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + " (non-finite loss)");
      }
      for (std::size_t l = 0; l < model.layers(); ++l) {
        model.W[l] -= cfg.learning_rate * grad.W[l];
        model.b[l] -= cfg.learning_rate * grad.b[l];
      }
    }
    out.history.push_back(record(epoch));
    if (out.history.back().val_mse < out.best_val_mse) {
      out.best_val_mse = out.history.back().val_mse;
      out.best_epoch = epoch;
      out.model = model;
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bootstrap

enum class BootstrapMode { Augment, Ensemble };

inline const char* to_string(BootstrapMode m) { return m == BootstrapMode::Augment ? "augment" : "ensemble"; }

/// B independent resamples of n rows with replacement; sample b uses
/// derive_seed(seed, b).
inline std::vector<Dataset> bootstrap_augment(const Dataset& data, std::size_t B, std::uint64_t seed) {
  if (B == 0) throw DataError("bootstrap: B must be >= 1");
  const std::size_t n = data.rows();
  if (n == 0) throw DataError("bootstrap: empty dataset");
  std::vector<Dataset> out(B);
  for (std::size_t s = 0; s < B; ++s) {
    Rng rng(derive_seed(seed, s));
    out[s].x.resize(data.x.rows(), data.x.cols());
    out[s].y.resize(data.y.size());
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = static_cast<Eigen::Index>(uniform_index(rng, n));
      out[s].x.row(static_cast<Eigen::Index>(i)) = data.x.row(r);
      out[s].y(static_cast<Eigen::Index>(i)) = data.y(r);
    }
  }
  return out;
}

inline Dataset concatenate(const std::vector<Dataset>& parts) {
  Eigen::Index rows = 0;
  for (const auto& p : parts) rows += p.x.rows();
  if (parts.empty()) return {};
  Dataset out;
  out.x.resize(rows, parts.front().x.cols());
  out.y.resize(rows);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.x.middleRows(at, p.x.rows()) = p.x;
    out.y.segment(at, p.y.size()) = p.y;
    at += p.x.rows();
  }
  return out;
}

/// Averages member predictions (aggregation mode).
struct FcnEnsemble {
  std::vector<FcnModel> members;

  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const {
    if (members.empty()) throw DataError("fcn ensemble: no members");
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(x.rows());
    for (const auto& m : members) sum += m.predict(x);
    return sum / static_cast<double>(members.size());
  }

  std::size_t parameter_count() const noexcept {
    return members.empty() ? 0 : members.front().parameter_count();
  }
};

/// Trains one model per bootstrap sample, all from the same initial weights.
inline FcnEnsemble train_ensemble(const FcnModel& initial, const std::vector<Dataset>& samples, const Dataset& val,
                                  const TrainConfig& cfg) {
  FcnEnsemble out;
  out.members.resize(samples.size());
  parallel_for(samples.size(), [&](std::size_t s) {
    TrainConfig c = cfg;
    c.seed = derive_seed(cfg.seed, s);
    out.members[s] = train(initial, samples[s], val, c).model;
  });
  return out;
}

struct Evaluation {
  double mse = 0.0;
  std::size_t params = 0;
};

inline Evaluation evaluate(const FcnModel& model, const Dataset& test) {
  model.check_arity(test.x);
  if (test.rows() == 0) throw DataError("evaluate: empty test set");
  return {mse(model.predict(test.x), test.y), model.parameter_count()};
}

// ---------------------------------------------------------------------------
// Text format
//
//   fcn 1
//   layers <p> <h1> ... <q>
//   activation relu
//   W <l> <out> <in>      followed by <out> rows of <in> values
//   b <l> <out>           followed by one row of <out> values

inline void write_fcn(std::ostream& out, const FcnModel& m) {
  out << "fcn 1\nlayers";
  for (auto s : m.sizes) out << ' ' << s;
  out << "\nactivation relu\n";
  for (std::size_t l = 0; l < m.layers(); ++l) {
    out << "W " << l << ' ' << m.W[l].rows() << ' ' << m.W[l].cols() << '\n';
    for (Eigen::Index r = 0; r < m.W[l].rows(); ++r) {
      for (Eigen::Index c = 0; c < m.W[l].cols(); ++c) out << (c ? " " : "") << format_double(m.W[l](r, c));
      out << '\n';
    }
    out << "b " << l << ' ' << m.b[l].size() << '\n';
    for (Eigen::Index r = 0; r < m.b[l].size(); ++r) out << (r ? " " : "") << format_double(m.b[l](r));
    out << '\n';
  }
}

inline FcnModel read_fcn(std::istream& in, const std::string& source = "<model>") {
  auto fail = [&](const std::string& what) -> void { throw DataError(source + ": " + what); };
  std::string word;
  int version = 0;
  if (!(in >> word >> version) || word != "fcn" || version != 1) fail("not an fcn model file");
  std::string line;
  std::getline(in, line);
  if (!std::getline(in, line)) fail("missing layers line");
  std::istringstream ls(line);
  ls >> word;
  if (word != "layers") fail("expected 'layers'");
  std::vector<std::size_t> sizes;
  for (std::size_t s; ls >> s;) sizes.push_back(s);
  if (!(in >> word) || word != "activation" || !(in >> word) || word != "relu") fail("expected 'activation relu'");
  FcnModel m = init_fcn(sizes, 0);
  auto read_value = [&]() {
    if (!(in >> word)) fail("truncated weights");
    const auto v = detail::parse_double(word);
    if (!v || !std::isfinite(*v)) fail("bad number '" + word + "'");
    return *v;
  };
  for (std::size_t l = 0; l < m.layers(); ++l) {
    std::size_t idx = 0, rows = 0, cols = 0;
    if (!(in >> word >> idx >> rows >> cols) || word != "W" || idx != l ||
        rows != static_cast<std::size_t>(m.W[l].rows()) || cols != static_cast<std::size_t>(m.W[l].cols())) {
      fail("bad weight header for layer " + std::to_string(l));
    }
    for (Eigen::Index r = 0; r < m.W[l].rows(); ++r) {
      for (Eigen::Index c = 0; c < m.W[l].cols(); ++c) m.W[l](r, c) = read_value();
    }
    if (!(in >> word >> idx >> rows) || word != "b" || idx != l || rows != static_cast<std::size_t>(m.b[l].size())) {
      fail("bad bias header for layer " + std::to_string(l));
    }
    for (Eigen::Index r = 0; r < m.b[l].size(); ++r) m.b[l](r) = read_value();
  }
  return m;
}

inline void save_fcn(const std::string& path, const FcnModel& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write model file '" + path + "'");
  write_fcn(out, m);
}

inline FcnModel load_fcn(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing model file '" + path + "'");
  return read_fcn(in, path);
}

inline void write_loss_csv(std::ostream& out, const std::vector<EpochLoss>& history) {
  out << "epoch,train_mse,val_mse\n";
  for (const auto& e : history) {
    out << e.epoch << ',' << format_double(e.train_mse) << ',' << format_double(e.val_mse) << '\n';
  }
}

}  // namespace corealloc
