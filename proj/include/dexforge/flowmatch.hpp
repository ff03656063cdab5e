#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace dexforge {

/// One point on the linear-Gaussian path between noise and a flattened action chunk.
struct FlowSample {
  double tau = 0.0;
  Eigen::VectorXd a;         // clean chunk
  Eigen::VectorXd eps;       // standard normal noise
  Eigen::VectorXd a_tau;     // tau·a + (1 − tau)·eps
  Eigen::VectorXd u_target;  // a − eps
};

/// Builds the sample from given noise. Throws Error{kInvalidArgument} for tau outside [0, 1],
/// Error{kShapeMismatch} when a and eps differ in length.
FlowSample make_flow_sample(const Eigen::VectorXd& a, double tau, const Eigen::VectorXd& eps);
/// Draws eps ~ N(0, I) from `rng`.
FlowSample sample_path(const Eigen::VectorXd& a, double tau, std::mt19937_64& rng);

/// v(A_tau, tau, obs) -> same shape as A.
class VectorField {
 public:
  virtual ~VectorField() = default;
  virtual int action_dim() const = 0;
  virtual int obs_dim() const = 0;
  virtual Eigen::VectorXd eval(const Eigen::VectorXd& a_tau, double tau, const Eigen::VectorXd& obs) const = 0;
};

struct NetShape {
  int action_dim = 0;
  int obs_dim = 0;
  std::vector<int> hidden;  // tanh layers; empty gives a single linear map
  bool tau_input = true;    // feed tau as an explicit input
  bool bias = true;
};

/// Dense network: input [A_tau, tau?, obs], tanh hidden layers, linear output.
class PolicyNet : public VectorField {
 public:
  /// Glorot-uniform weights from `seed`, zero biases. Throws Error{kInvalidArgument}.
  PolicyNet(const NetShape& shape, std::uint64_t seed);

  int action_dim() const override { return shape_.action_dim; }
  int obs_dim() const override { return shape_.obs_dim; }
  int input_dim() const;
  const NetShape& shape() const { return shape_; }

  Eigen::VectorXd eval(const Eigen::VectorXd& a_tau, double tau, const Eigen::VectorXd& obs) const override;

  /// Column-batched forward pass: `inputs` is input_dim × B.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& inputs) const;
  /// Gradient of sum_b <d_out_b, f(x_b)> with respect to the flattened parameters.
  Eigen::VectorXd backward(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& d_out) const;

  /// Flattened parameters: per layer, W column-major then b (when present).
  Eigen::VectorXd parameters() const;
  void set_parameters(const Eigen::VectorXd& theta);
  int parameter_count() const;

  /// Stacks one input column.
  Eigen::VectorXd make_input(const Eigen::VectorXd& a_tau, double tau, const Eigen::VectorXd& obs) const;

 private:
  struct Layer {
    Eigen::MatrixXd w;
    Eigen::VectorXd b;
  };
  NetShape shape_;
  std::vector<Layer> layers_;
};

enum class LossNorm { kSquared, kUnsquared };

/// Samples paired with their observation features.
struct FlowBatch {
  std::vector<FlowSample> samples;
  std::vector<Eigen::VectorXd> obs;
};

/// mean_b ‖v(A_tau, tau, obs) − u_target‖² (or the plain norm). Throws Error{kShapeMismatch}.
double fm_loss(const VectorField& field, const FlowBatch& batch, LossNorm norm = LossNorm::kSquared);

struct LossAndGradient {
  double loss = 0.0;
  Eigen::VectorXd grad;  // d loss / d parameters
};
LossAndGradient fm_loss_and_grad(const PolicyNet& net, const FlowBatch& batch, LossNorm norm = LossNorm::kSquared);

/// Forward Euler from `a0` over tau ∈ [0, 1] in 1/delta steps. Throws Error{kInvalidArgument}
/// when 1/delta is not an integer, Error{kNonFiniteState} on a non-finite iterate.
Eigen::VectorXd euler_integrate(const VectorField& field, const Eigen::VectorXd& obs, const Eigen::VectorXd& a0,
                                double delta);
/// A0 ~ N(0, I) from `rng`, then euler_integrate.
Eigen::VectorXd euler_sample(const VectorField& field, const Eigen::VectorXd& obs, double delta, std::mt19937_64& rng);

struct TrainConfig {
  int batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 1e-4;  // decoupled (AdamW)
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double max_norm = 1.0;  // gradient clipping; <= 0 disables
  int epochs = 100;
  std::uint64_t seed = 0;
  double euler_delta = 0.1;
  LossNorm norm = LossNorm::kSquared;

  /// Throws Error{kInvalidArgument}.
  void validate() const;
};

/// One (observation, flattened chunk) pair.
struct TrainingPair {
  Eigen::VectorXd obs;
  Eigen::VectorXd chunk;
};

struct TrainReport {
  std::vector<double> epoch_loss;  // mean minibatch loss per epoch
  int steps = 0;
};

/// Minibatch AdamW with tau ~ U[0, 1] and fresh noise per item. Deterministic given cfg.seed.
/// Throws Error{kInvalidArgument} on an empty dataset, Error{kShapeMismatch},
/// Error{kNonFiniteState} when the loss diverges.
TrainReport train(PolicyNet& net, const std::vector<TrainingPair>& data, const TrainConfig& cfg);

/// Full-batch AdamW on a fixed set of flow samples; one step per epoch.
TrainReport train_on_samples(PolicyNet& net, const FlowBatch& batch, const TrainConfig& cfg);

/// Mean loss over `draws` seeded path samples per pair.
double evaluate_loss(const VectorField& field, const std::vector<TrainingPair>& data, int draws, std::uint64_t seed,
                     LossNorm norm = LossNorm::kSquared);

/// Synthetic reaching task: obs = target (x, y); chunk = H FAAS vectors whose right-wrist block
/// moves in a straight line from the origin to the target (identity rotation), flattened.
std::vector<TrainingPair> reaching_task(int count, int horizon, std::uint64_t seed);

/// Binary checkpoint: "DXFMCKPT", u32 header length, JSON header (shape, config, seed), then
/// little-endian float32 parameters.
void save_checkpoint(const PolicyNet& net, const TrainConfig& cfg, const std::string& path);
/// Throws Error{kIo} or Error{kParse}.
PolicyNet load_checkpoint(const std::string& path);

/// "epoch,loss" CSV.
std::string loss_curve_csv(const TrainReport& report);

}  // namespace dexforge
