#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "srsm/interval.hpp"

namespace srsm {

enum class Activation { identity, relu, tanh, softplus };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::softplus: return "softplus";
  }
  throw std::logic_error("unknown activation");
}

inline Activation activation_from_name(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "softplus") return Activation::softplus;
  throw std::invalid_argument("unknown activation: " + s);
}

struct Layer {
  Eigen::MatrixXd w;  // out x in
  Eigen::VectorXd b;  // out
  Activation act = Activation::identity;
};

/// Fixed-topology fully connected network. Instances are immutable value
/// objects for evaluation; training code mutates its own copy through
/// mutable_layers(). All evaluation paths are pure, so one snapshot can be
/// shared by any number of reader threads.
class Mlp {
 public:
  Mlp() = default;

  explicit Mlp(std::vector<Layer> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) throw std::invalid_argument("Mlp needs at least one layer");
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      const Layer& l = layers_[k];
      if (l.w.rows() != l.b.size()) throw std::invalid_argument("bias/weight shape mismatch");
      if (k > 0 && layers_[k - 1].w.rows() != l.w.cols()) {
        throw std::invalid_argument("consecutive layer dimensions must chain");
      }
      if (!l.w.allFinite() || !l.b.allFinite()) {
        throw std::invalid_argument("network parameters must be finite");
      }
    }
  }

  // Uniform fan-in initialization: U(-1/sqrt(in), 1/sqrt(in)).
  static Mlp random(const std::vector<int>& dims, const std::vector<Activation>& acts,
                    std::mt19937_64& rng) {
    if (dims.size() < 2 || acts.size() != dims.size() - 1) {
      throw std::invalid_argument("Mlp::random: need dims.size()-1 activations");
    }
    std::vector<Layer> layers(acts.size());
    for (std::size_t k = 0; k < acts.size(); ++k) {
      const int in = dims[k], out = dims[k + 1];
      const double scale = 1.0 / std::sqrt(static_cast<double>(in));
      std::uniform_real_distribution<double> u(-scale, scale);
      layers[k].w.resize(out, in);
      layers[k].b.resize(out);
      for (int j = 0; j < out; ++j) {
        for (int i = 0; i < in; ++i) layers[k].w(j, i) = u(rng);
        layers[k].b(j) = u(rng);
      }
      layers[k].act = acts[k];
    }
    return Mlp(std::move(layers));
  }

  // Conventional shapes used throughout: hidden relu layers + chosen output.
  static Mlp make_standard(int input_dim, int output_dim, int hidden_layers, int hidden_units,
                           Activation output_act, std::mt19937_64& rng) {
    std::vector<int> dims{input_dim};
    std::vector<Activation> acts;
    for (int k = 0; k < hidden_layers; ++k) {
      dims.push_back(hidden_units);
      acts.push_back(Activation::relu);
    }
    dims.push_back(output_dim);
    acts.push_back(output_act);
    return random(dims, acts, rng);
  }

  int input_dim() const { return static_cast<int>(layers_.front().w.cols()); }
  int output_dim() const { return static_cast<int>(layers_.back().w.rows()); }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& mutable_layers() { return layers_; }

  struct Trace {
    // post[k] is the input of layer k (post[0] = network input);
    // pre[k] is layer k's pre-activation. Shapes: dim x batch.
    std::vector<Eigen::MatrixXd> post;
    std::vector<Eigen::MatrixXd> pre;
  };

  /// Columns are independent samples.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const {
    check_input(x.rows());
    Eigen::MatrixXd h = x;
    for (const Layer& l : layers_) {
      h = (l.w * h).colwise() + l.b;
      apply_activation(l.act, h);
    }
    return h;
  }

  Eigen::VectorXd forward(const Eigen::VectorXd& x) const {
    return forward(Eigen::MatrixXd(x)).col(0);
  }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Trace& trace) const {
    check_input(x.rows());
    trace.post.assign(1, x);
    trace.pre.clear();
    trace.pre.reserve(layers_.size());
    Eigen::MatrixXd h = x;
    for (const Layer& l : layers_) {
      trace.pre.emplace_back((l.w * h).colwise() + l.b);
      h = trace.pre.back();
      apply_activation(l.act, h);
      trace.post.push_back(h);
    }
    return h;
  }

  nlohmann::json to_json() const {
    nlohmann::json layers = nlohmann::json::array();
    for (const Layer& l : layers_) {
      std::vector<double> w(l.w.size());
      for (Eigen::Index r = 0; r < l.w.rows(); ++r) {
        for (Eigen::Index c = 0; c < l.w.cols(); ++c) {
          w[static_cast<std::size_t>(r * l.w.cols() + c)] = l.w(r, c);  // row-major
        }
      }
      layers.push_back({{"w", w},
                        {"b", std::vector<double>(l.b.data(), l.b.data() + l.b.size())},
                        {"act", activation_name(l.act)},
                        {"rows", l.w.rows()},
                        {"cols", l.w.cols()}});
    }
    return {{"layers", layers}, {"input_dim", input_dim()}, {"output_dim", output_dim()}};
  }

  static Mlp from_json(const nlohmann::json& j) {
    std::vector<Layer> layers;
    for (const auto& lj : j.at("layers")) {
      Layer l;
      const auto rows = lj.at("rows").get<Eigen::Index>();
      const auto cols = lj.at("cols").get<Eigen::Index>();
      const auto w = lj.at("w").get<std::vector<double>>();
      const auto b = lj.at("b").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(w.size()) != rows * cols ||
          static_cast<Eigen::Index>(b.size()) != rows) {
        throw std::invalid_argument("network json: shape mismatch");
      }
      l.w.resize(rows, cols);
      for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
          l.w(r, c) = w[static_cast<std::size_t>(r * cols + c)];
        }
      }
      l.b = Eigen::Map<const Eigen::VectorXd>(b.data(), rows);
      l.act = activation_from_name(lj.at("act").get<std::string>());
      layers.push_back(std::move(l));
    }
    Mlp net(std::move(layers));
    if (net.input_dim() != j.at("input_dim").get<int>() ||
        net.output_dim() != j.at("output_dim").get<int>()) {
      throw std::invalid_argument("network json: declared dims do not match layers");
    }
    return net;
  }

 private:
  void check_input(Eigen::Index rows) const {
    if (rows != input_dim()) throw std::invalid_argument("Mlp: input dimension mismatch");
  }

  static void apply_activation(Activation act, Eigen::MatrixXd& h) {
    switch (act) {
      case Activation::identity:
        return;
      case Activation::relu:
        h = h.cwiseMax(0.0);
        return;
      case Activation::tanh:
        h = h.array().tanh().matrix();
        return;
      case Activation::softplus:
        h = h.unaryExpr([](double v) { return softplus(v); });
        return;
    }
  }

  std::vector<Layer> layers_;
};

/// Per-layer gradient accumulators; shapes always match the owning network.
struct GradientTape {
  std::vector<Eigen::MatrixXd> dw;
  std::vector<Eigen::VectorXd> db;

  GradientTape() = default;
  explicit GradientTape(const Mlp& net) { reset(net); }

  void reset(const Mlp& net) {
    dw.clear();
    db.clear();
    for (const Layer& l : net.layers()) {
      dw.push_back(Eigen::MatrixXd::Zero(l.w.rows(), l.w.cols()));
      db.push_back(Eigen::VectorXd::Zero(l.b.size()));
    }
  }

  void set_zero() {
    for (auto& m : dw) m.setZero();
    for (auto& v : db) v.setZero();
  }

  void add(const GradientTape& o) {
    for (std::size_t k = 0; k < dw.size(); ++k) {
      dw[k] += o.dw[k];
      db[k] += o.db[k];
    }
  }

  void scale(double s) {
    for (auto& m : dw) m *= s;
    for (auto& v : db) v *= s;
  }

  bool all_finite() const {
    for (const auto& m : dw) {
      if (!m.allFinite()) return false;
    }
    for (const auto& v : db) {
      if (!v.allFinite()) return false;
    }
    return true;
  }
};

inline double activation_derivative(Activation act, double pre) {
  switch (act) {
    case Activation::identity: return 1.0;
    case Activation::relu: return pre > 0 ? 1.0 : 0.0;  // subgradient 0 at 0
    case Activation::tanh: {
      const double t = std::tanh(pre);
      return 1.0 - t * t;
    }
    case Activation::softplus: return softplus_deriv(pre);
  }
  throw std::logic_error("unknown activation");
}

/// Exact reverse-mode pass for upstream^T * forward(net, x), accumulated into
/// `tape` (summed over batch columns). Optionally also returns d/dx.
inline void mlp_backward(const Mlp& net, const Mlp::Trace& trace, const Eigen::MatrixXd& upstream,
                         GradientTape& tape, Eigen::MatrixXd* input_grad = nullptr) {
  const auto& layers = net.layers();
  Eigen::MatrixXd delta = upstream;
  for (int k = static_cast<int>(layers.size()) - 1; k >= 0; --k) {
    const Layer& l = layers[static_cast<std::size_t>(k)];
    const Eigen::MatrixXd& pre = trace.pre[static_cast<std::size_t>(k)];
    switch (l.act) {
      case Activation::identity:
        break;
      case Activation::relu:
        delta = delta.cwiseProduct((pre.array() > 0.0).cast<double>().matrix());
        break;
      case Activation::tanh:
        delta = delta.cwiseProduct((1.0 - pre.array().tanh().square()).matrix());
        break;
      case Activation::softplus:
        delta = delta.cwiseProduct(pre.unaryExpr([](double v) { return softplus_deriv(v); }));
        break;
    }
    tape.dw[static_cast<std::size_t>(k)].noalias() +=
        delta * trace.post[static_cast<std::size_t>(k)].transpose();
    tape.db[static_cast<std::size_t>(k)] += delta.rowwise().sum();
    if (k > 0 || input_grad != nullptr) {
      delta = (l.w.transpose() * delta).eval();
    }
  }
  if (input_grad != nullptr) *input_grad = delta;
}

/// Convenience single-point form: gradients of upstream . forward(net, x).
inline GradientTape mlp_backward(const Mlp& net, const Eigen::VectorXd& x,
                                 const Eigen::VectorXd& upstream,
                                 Eigen::VectorXd* input_grad = nullptr) {
  Mlp::Trace trace;
  net.forward(Eigen::MatrixXd(x), trace);
  GradientTape tape(net);
  Eigen::MatrixXd ig;
  mlp_backward(net, trace, Eigen::MatrixXd(upstream), tape, input_grad ? &ig : nullptr);
  if (input_grad) *input_grad = ig.col(0);
  return tape;
}

/// Adam with bias correction. The paper-facing hyperparameter is the learning
/// rate; the moment decays and epsilon are the usual defaults.
struct AdamState {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<Eigen::MatrixXd> mw, vw;
  std::vector<Eigen::VectorXd> mb, vb;

  AdamState() = default;
  AdamState(const Mlp& net, double learning_rate) : lr(learning_rate) {
    for (const Layer& l : net.layers()) {
      mw.push_back(Eigen::MatrixXd::Zero(l.w.rows(), l.w.cols()));
      vw.push_back(Eigen::MatrixXd::Zero(l.w.rows(), l.w.cols()));
      mb.push_back(Eigen::VectorXd::Zero(l.b.size()));
      vb.push_back(Eigen::VectorXd::Zero(l.b.size()));
    }
  }
};

inline void optimizer_step(AdamState& state, Mlp& net, const GradientTape& tape) {
  if (!tape.all_finite()) {
    throw std::runtime_error("optimizer_step: non-finite gradient, step aborted");
  }
  state.step += 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  auto& layers = net.mutable_layers();
  for (std::size_t k = 0; k < layers.size(); ++k) {
    state.mw[k] = state.beta1 * state.mw[k] + (1 - state.beta1) * tape.dw[k];
    state.vw[k] = state.beta2 * state.vw[k] + (1 - state.beta2) * tape.dw[k].cwiseAbs2();
    state.mb[k] = state.beta1 * state.mb[k] + (1 - state.beta1) * tape.db[k];
    state.vb[k] = state.beta2 * state.vb[k] + (1 - state.beta2) * tape.db[k].cwiseAbs2();
    layers[k].w -= (state.lr * (state.mw[k] / c1).array() /
                    ((state.vw[k] / c2).array().sqrt() + state.eps))
                       .matrix();
    layers[k].b -= (state.lr * (state.mb[k] / c1).array() /
                    ((state.vb[k] / c2).array().sqrt() + state.eps))
                       .matrix();
    if (!layers[k].w.allFinite() || !layers[k].b.allFinite()) {
      throw std::runtime_error("optimizer_step: parameters became non-finite");
    }
  }
}

}  // namespace srsm
