#include "dexforge/flowmatch.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "dexforge/error.hpp"
#include "dexforge/faas.hpp"
#include "dexforge/json_util.hpp"

namespace dexforge {

namespace {

constexpr char kCheckpointMagic[8] = {'D', 'X', 'F', 'M', 'C', 'K', 'P', 'T'};

Eigen::VectorXd standard_normal(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

void check_sample_shape(const VectorField& field, const FlowBatch& batch) {
  if (batch.samples.size() != batch.obs.size()) {
    throw Error(ErrorCode::kShapeMismatch, "batch has " + std::to_string(batch.samples.size()) + " samples but " +
                                               std::to_string(batch.obs.size()) + " observations");
  }
  if (batch.samples.empty()) throw Error(ErrorCode::kShapeMismatch, "empty batch");
  for (std::size_t b = 0; b < batch.samples.size(); ++b) {
    const FlowSample& s = batch.samples[b];
    if (s.a_tau.size() != field.action_dim() || s.u_target.size() != field.action_dim()) {
      throw Error(ErrorCode::kShapeMismatch, "sample " + std::to_string(b) + " has action length " +
                                                 std::to_string(s.a_tau.size()) + ", field expects " +
                                                 std::to_string(field.action_dim()));
    }
    if (batch.obs[b].size() != field.obs_dim()) {
      throw Error(ErrorCode::kShapeMismatch, "observation " + std::to_string(b) + " has length " +
                                                 std::to_string(batch.obs[b].size()) + ", field expects " +
                                                 std::to_string(field.obs_dim()));
    }
  }
}

double sample_loss(const Eigen::VectorXd& residual, LossNorm norm) {
  return norm == LossNorm::kSquared ? residual.squaredNorm() : residual.norm();
}

struct Adam {
  Eigen::VectorXd m, v;
  int t = 0;

  explicit Adam(Eigen::Index n) : m(Eigen::VectorXd::Zero(n)), v(Eigen::VectorXd::Zero(n)) {}

  void step(Eigen::VectorXd& theta, Eigen::VectorXd grad, const TrainConfig& cfg) {
    if (cfg.max_norm > 0.0) {
      const double norm = grad.norm();
      if (norm > cfg.max_norm) grad *= cfg.max_norm / norm;
    }
    ++t;
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    const Eigen::VectorXd update =
        (m / c1).array() / ((v / c2).array().sqrt() + cfg.adam_eps);
    theta -= cfg.lr * (update + cfg.weight_decay * theta);
  }
};

nlohmann::json config_json(const TrainConfig& cfg) {
  return {{"batch_size", cfg.batch_size}, {"lr", cfg.lr},         {"weight_decay", cfg.weight_decay},
          {"beta1", cfg.beta1},           {"beta2", cfg.beta2},   {"adam_eps", cfg.adam_eps},
          {"max_norm", cfg.max_norm},     {"epochs", cfg.epochs}, {"seed", cfg.seed},
          {"euler_delta", cfg.euler_delta},
          {"norm", cfg.norm == LossNorm::kSquared ? "squared" : "unsquared"}};
}

}  // namespace

FlowSample make_flow_sample(const Eigen::VectorXd& a, double tau, const Eigen::VectorXd& eps) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "tau must lie in [0, 1]");
  if (a.size() != eps.size()) throw Error(ErrorCode::kShapeMismatch, "chunk and noise differ in length");
  FlowSample s;
  s.tau = tau;
  s.a = a;
  s.eps = eps;
  s.a_tau = tau * a + (1.0 - tau) * eps;
  s.u_target = a - eps;
  return s;
}

FlowSample sample_path(const Eigen::VectorXd& a, double tau, std::mt19937_64& rng) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "tau must lie in [0, 1]");
  return make_flow_sample(a, tau, standard_normal(a.size(), rng));
}

PolicyNet::PolicyNet(const NetShape& shape, std::uint64_t seed) : shape_(shape) {
  if (shape.action_dim < 1 || shape.obs_dim < 0) {
    throw Error(ErrorCode::kInvalidArgument, "network needs action_dim >= 1 and obs_dim >= 0");
  }
  std::vector<int> sizes{input_dim()};
  for (int h : shape.hidden) {
    if (h < 1) throw Error(ErrorCode::kInvalidArgument, "hidden layer sizes must be >= 1");
    sizes.push_back(h);
  }
  sizes.push_back(shape.action_dim);
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const double limit = std::sqrt(6.0 / (sizes[l] + sizes[l + 1]));
    std::uniform_real_distribution<double> u(-limit, limit);
    Layer layer{Eigen::MatrixXd(sizes[l + 1], sizes[l]), Eigen::VectorXd::Zero(shape.bias ? sizes[l + 1] : 0)};
    for (Eigen::Index c = 0; c < layer.w.cols(); ++c) {
      for (Eigen::Index r = 0; r < layer.w.rows(); ++r) layer.w(r, c) = u(rng);
    }
    layers_.push_back(std::move(layer));
  }
}

int PolicyNet::input_dim() const { return shape_.action_dim + (shape_.tau_input ? 1 : 0) + shape_.obs_dim; }

Eigen::VectorXd PolicyNet::make_input(const Eigen::VectorXd& a_tau, double tau, const Eigen::VectorXd& obs) const {
  if (a_tau.size() != shape_.action_dim || obs.size() != shape_.obs_dim) {
    throw Error(ErrorCode::kShapeMismatch, "network input has action length " + std::to_string(a_tau.size()) +
                                               " and observation length " + std::to_string(obs.size()) +
                                               ", expected " + std::to_string(shape_.action_dim) + " and " +
                                               std::to_string(shape_.obs_dim));
  }
  Eigen::VectorXd x(input_dim());
  x.head(shape_.action_dim) = a_tau;
  Eigen::Index at = shape_.action_dim;
  if (shape_.tau_input) x[at++] = tau;
  x.tail(shape_.obs_dim) = obs;
  return x;
}

Eigen::VectorXd PolicyNet::eval(const Eigen::VectorXd& a_tau, double tau, const Eigen::VectorXd& obs) const {
  return forward(make_input(a_tau, tau, obs)).col(0);
}

Eigen::MatrixXd PolicyNet::forward(const Eigen::MatrixXd& inputs) const {
  Eigen::MatrixXd h = inputs;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Eigen::MatrixXd z = layers_[l].w * h;
    if (shape_.bias) z.colwise() += layers_[l].b;
    h = l + 1 < layers_.size() ? Eigen::MatrixXd(z.array().tanh()) : z;
  }
  return h;
}

Eigen::VectorXd PolicyNet::backward(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& d_out) const {
  std::vector<Eigen::MatrixXd> acts{inputs};
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Eigen::MatrixXd z = layers_[l].w * acts.back();
    if (shape_.bias) z.colwise() += layers_[l].b;
    acts.push_back(l + 1 < layers_.size() ? Eigen::MatrixXd(z.array().tanh()) : z);
  }
  std::vector<Eigen::VectorXd> grads(2 * layers_.size());
  Eigen::MatrixXd dz = d_out;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const Eigen::MatrixXd dw = dz * acts[l].transpose();
    grads[2 * l] = Eigen::Map<const Eigen::VectorXd>(dw.data(), dw.size());
    if (shape_.bias) grads[2 * l + 1] = dz.rowwise().sum();
    if (l == 0) break;
    const Eigen::MatrixXd dh = layers_[l].w.transpose() * dz;
    dz = dh.array() * (1.0 - acts[l].array().square());
  }
  Eigen::VectorXd flat(parameter_count());
  Eigen::Index at = 0;
  for (const Eigen::VectorXd& g : grads) {
    flat.segment(at, g.size()) = g;
    at += g.size();
  }
  return flat;
}

int PolicyNet::parameter_count() const {
  Eigen::Index n = 0;
  for (const Layer& l : layers_) n += l.w.size() + l.b.size();
  return static_cast<int>(n);
}

Eigen::VectorXd PolicyNet::parameters() const {
  Eigen::VectorXd theta(parameter_count());
  Eigen::Index at = 0;
  for (const Layer& l : layers_) {
    theta.segment(at, l.w.size()) = Eigen::Map<const Eigen::VectorXd>(l.w.data(), l.w.size());
    at += l.w.size();
    theta.segment(at, l.b.size()) = l.b;
    at += l.b.size();
  }
  return theta;
}

void PolicyNet::set_parameters(const Eigen::VectorXd& theta) {
  if (theta.size() != parameter_count()) {
    throw Error(ErrorCode::kShapeMismatch, "expected " + std::to_string(parameter_count()) + " parameters, got " +
                                               std::to_string(theta.size()));
  }
  if (!theta.allFinite()) throw Error(ErrorCode::kNonFiniteState, "non-finite network parameters");
  Eigen::Index at = 0;
  for (Layer& l : layers_) {
    Eigen::Map<Eigen::VectorXd>(l.w.data(), l.w.size()) = theta.segment(at, l.w.size());
    at += l.w.size();
    l.b = theta.segment(at, l.b.size());
    at += l.b.size();
  }
}

double fm_loss(const VectorField& field, const FlowBatch& batch, LossNorm norm) {
  check_sample_shape(field, batch);
  double total = 0.0;
  for (std::size_t b = 0; b < batch.samples.size(); ++b) {
    const FlowSample& s = batch.samples[b];
    total += sample_loss(field.eval(s.a_tau, s.tau, batch.obs[b]) - s.u_target, norm);
  }
  return total / static_cast<double>(batch.samples.size());
}

LossAndGradient fm_loss_and_grad(const PolicyNet& net, const FlowBatch& batch, LossNorm norm) {
  check_sample_shape(net, batch);
  const auto count = static_cast<Eigen::Index>(batch.samples.size());
  Eigen::MatrixXd inputs(net.input_dim(), count);
  Eigen::MatrixXd targets(net.action_dim(), count);
  for (Eigen::Index b = 0; b < count; ++b) {
    const FlowSample& s = batch.samples[static_cast<std::size_t>(b)];
    inputs.col(b) = net.make_input(s.a_tau, s.tau, batch.obs[static_cast<std::size_t>(b)]);
    targets.col(b) = s.u_target;
  }
  const Eigen::MatrixXd residual = net.forward(inputs) - targets;
  LossAndGradient out;
  Eigen::MatrixXd d_out(residual.rows(), residual.cols());
  for (Eigen::Index b = 0; b < count; ++b) {
    out.loss += sample_loss(residual.col(b), norm);
    if (norm == LossNorm::kSquared) {
      d_out.col(b) = 2.0 * residual.col(b);
    } else {
      const double n = residual.col(b).norm();
      d_out.col(b) = n > 0.0 ? Eigen::VectorXd(residual.col(b) / n) : Eigen::VectorXd::Zero(residual.rows());
    }
  }
  out.loss /= static_cast<double>(count);
  d_out /= static_cast<double>(count);
  out.grad = net.backward(inputs, d_out);
  return out;
}

Eigen::VectorXd euler_integrate(const VectorField& field, const Eigen::VectorXd& obs, const Eigen::VectorXd& a0,
                                double delta) {
  if (!(delta > 0.0 && delta <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "Euler step must lie in (0, 1]");
  const double inverse = 1.0 / delta;
  const long steps = std::lround(inverse);
  if (std::abs(inverse - static_cast<double>(steps)) > 1e-9 * inverse) {
    throw Error(ErrorCode::kInvalidArgument, "1/delta must be an integer");
  }
  if (a0.size() != field.action_dim()) throw Error(ErrorCode::kShapeMismatch, "initial state has the wrong length");
  Eigen::VectorXd a = a0;
  for (long k = 0; k < steps; ++k) {
    a += delta * field.eval(a, static_cast<double>(k) * delta, obs);
    if (!a.allFinite()) {
      throw Error(ErrorCode::kNonFiniteState, "non-finite Euler iterate at step " + std::to_string(k + 1));
    }
  }
  return a;
}

Eigen::VectorXd euler_sample(const VectorField& field, const Eigen::VectorXd& obs, double delta, std::mt19937_64& rng) {
  return euler_integrate(field, obs, standard_normal(field.action_dim(), rng), delta);
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw Error(ErrorCode::kInvalidArgument, "batch_size must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw Error(ErrorCode::kInvalidArgument, "lr must be finite and >= 0");
  if (!(weight_decay >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw Error(ErrorCode::kInvalidArgument, "adam_eps must be positive");
  if (epochs < 0) throw Error(ErrorCode::kInvalidArgument, "epochs must be >= 0");
  const double inverse = 1.0 / euler_delta;
  if (!(euler_delta > 0.0 && euler_delta <= 1.0) || std::abs(inverse - std::round(inverse)) > 1e-9 * inverse) {
    throw Error(ErrorCode::kInvalidArgument, "euler_delta must divide 1 evenly");
  }
}

TrainReport train(PolicyNet& net, const std::vector<TrainingPair>& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw Error(ErrorCode::kInvalidArgument, "training set is empty");
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> tau_dist(0.0, 1.0);
  Eigen::VectorXd theta = net.parameters();
  Adam adam(theta.size());
  TrainReport report;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      FlowBatch batch;
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      for (std::size_t i = start; i < end; ++i) {
        const TrainingPair& pair = data[order[i]];
        batch.samples.push_back(sample_path(pair.chunk, tau_dist(rng), rng));
        batch.obs.push_back(pair.obs);
      }
      const LossAndGradient lg = fm_loss_and_grad(net, batch, cfg.norm);
      if (!std::isfinite(lg.loss) || !lg.grad.allFinite()) {
        throw Error(ErrorCode::kNonFiniteState, "training diverged at epoch " + std::to_string(epoch));
      }
      adam.step(theta, lg.grad, cfg);
      net.set_parameters(theta);
      sum += lg.loss;
      ++batches;
      ++report.steps;
    }
    report.epoch_loss.push_back(sum / batches);
  }
  return report;
}

TrainReport train_on_samples(PolicyNet& net, const FlowBatch& batch, const TrainConfig& cfg) {
  cfg.validate();
  Eigen::VectorXd theta = net.parameters();
  Adam adam(theta.size());
  TrainReport report;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const LossAndGradient lg = fm_loss_and_grad(net, batch, cfg.norm);
    if (!std::isfinite(lg.loss) || !lg.grad.allFinite()) {
      throw Error(ErrorCode::kNonFiniteState, "training diverged at epoch " + std::to_string(epoch));
    }
    adam.step(theta, lg.grad, cfg);
    net.set_parameters(theta);
    report.epoch_loss.push_back(lg.loss);
    ++report.steps;
  }
  return report;
}

double evaluate_loss(const VectorField& field, const std::vector<TrainingPair>& data, int draws, std::uint64_t seed,
                     LossNorm norm) {
  if (data.empty() || draws < 1) throw Error(ErrorCode::kInvalidArgument, "evaluation needs data and draws >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> tau_dist(0.0, 1.0);
  FlowBatch batch;
  for (const TrainingPair& pair : data) {
    for (int d = 0; d < draws; ++d) {
      batch.samples.push_back(sample_path(pair.chunk, tau_dist(rng), rng));
      batch.obs.push_back(pair.obs);
    }
  }
  return fm_loss(field, batch, norm);
}

std::vector<TrainingPair> reaching_task(int count, int horizon, std::uint64_t seed) {
  if (count < 1 || horizon < 1) throw Error(ErrorCode::kInvalidArgument, "reaching task needs count, horizon >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  const int wrist = faas_wrist_base(Side::kRight);
  std::vector<TrainingPair> data;
  for (int i = 0; i < count; ++i) {
    TrainingPair pair;
    pair.obs = Eigen::Vector2d(u(rng), u(rng));
    pair.chunk = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(horizon) * kFaasDim);
    for (int k = 0; k < horizon; ++k) {
      const Eigen::Index base = static_cast<Eigen::Index>(k) * kFaasDim + wrist;
      const double s = static_cast<double>(k + 1) / horizon;
      pair.chunk[base + 0] = 1.0;
      pair.chunk[base + 4] = 1.0;
      pair.chunk[base + 6] = s * pair.obs[0];
      pair.chunk[base + 7] = s * pair.obs[1];
    }
    data.push_back(std::move(pair));
  }
  return data;
}

void save_checkpoint(const PolicyNet& net, const TrainConfig& cfg, const std::string& path) {
  static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");
  const NetShape& s = net.shape();
  const nlohmann::json header{{"format", "dexforge-flowmatch"},
                              {"version", 1},
                              {"action_dim", s.action_dim},
                              {"obs_dim", s.obs_dim},
                              {"hidden", s.hidden},
                              {"tau_input", s.tau_input},
                              {"bias", s.bias},
                              {"parameter_count", net.parameter_count()},
                              {"activation", "tanh"},
                              {"config", config_json(cfg)}};
  const std::string text = header.dump();
  std::string blob(kCheckpointMagic, sizeof kCheckpointMagic);
  const auto length = static_cast<std::uint32_t>(text.size());
  blob.append(reinterpret_cast<const char*>(&length), 4);
  blob += text;
  const Eigen::VectorXd theta = net.parameters();
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const auto f = static_cast<float>(theta[i]);
    blob.append(reinterpret_cast<const char*>(&f), 4);
  }
  write_text_file(path, blob);
}

PolicyNet load_checkpoint(const std::string& path) {
  const std::string blob = read_text_file(path);
  if (blob.size() < 12 || std::memcmp(blob.data(), kCheckpointMagic, 8) != 0) {
    throw Error(ErrorCode::kParse, path + ": not a flow-matching checkpoint");
  }
  std::uint32_t length = 0;
  std::memcpy(&length, blob.data() + 8, 4);
  if (blob.size() < 12 + static_cast<std::size_t>(length)) throw Error(ErrorCode::kParse, path + ": truncated header");
  NetShape shape;
  int count = 0;
  try {
    const nlohmann::json h = nlohmann::json::parse(blob.substr(12, length));
    if (h.at("version").get<int>() != 1) throw Error(ErrorCode::kParse, path + ": unsupported checkpoint version");
    shape.action_dim = h.at("action_dim").get<int>();
    shape.obs_dim = h.at("obs_dim").get<int>();
    shape.hidden = h.at("hidden").get<std::vector<int>>();
    shape.tau_input = h.at("tau_input").get<bool>();
    shape.bias = h.at("bias").get<bool>();
    count = h.at("parameter_count").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, path + ": " + e.what());
  }
  PolicyNet net(shape, 0);
  if (count != net.parameter_count() || blob.size() != 12 + length + 4 * static_cast<std::size_t>(count)) {
    throw Error(ErrorCode::kParse, path + ": weight blob does not match the declared shape");
  }
  Eigen::VectorXd theta(count);
  for (int i = 0; i < count; ++i) {
    float f;
    std::memcpy(&f, blob.data() + 12 + length + 4 * static_cast<std::size_t>(i), 4);
    theta[i] = f;
  }
  net.set_parameters(theta);
  return net;
}

std::string loss_curve_csv(const TrainReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,loss\n";
  for (std::size_t e = 0; e < report.epoch_loss.size(); ++e) out << e << ',' << report.epoch_loss[e] << '\n';
  return out.str();
}

}  // namespace dexforge
