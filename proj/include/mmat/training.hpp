#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmat/attacks.hpp"
#include "mmat/data.hpp"
#include "mmat/nets.hpp"
#include "mmat/strategy.hpp"

namespace mmat {

enum class Method { kNatural, kSat, kMmat };

const char* to_string(Method m) noexcept;
Method method_from_string(std::string_view name);

struct LrMilestone {
  int epoch = 0;         // multiplier applies from the start of this epoch
  double factor = 0.1;
};

struct TrainConfig {
  int epochs = 40;
  std::size_t batch_size = 128;
  double lr = 0.05;
  std::vector<LrMilestone> milestones = {{30, 0.1}, {36, 0.1}};
  double momentum = 0.9;
  double weight_decay = 0.0035;  // weights only
  double lambda = 4.0;
  int attack_iterations = 10;
  double attack_step_fraction = 0.25;  // α_i = fraction · ε_i
  bool random_start = true;
  std::uint64_t seed = 0;
  Method method = Method::kNatural;
  double sat_epsilon = 0.0;
  LossKind sat_loss = LossKind::kCe;
  // Budget for the per-epoch robust-accuracy metrics; <= 0 means the dataset's base ε.
  double metric_epsilon = 0.0;
  bool robust_metrics = true;

  void validate() const;
  double lr_at(int epoch) const;
};

// Teacher for the logit-matching term. With no network the student's own logits,
// detached, stand in (the term and its gradient are then exactly zero).
struct TeacherRef {
  std::optional<Network> network;
  std::string tag;
};

struct MmatSetup {
  TeacherRef teacher;
  StrategyParams strategy;
  // Per-example budgets for the static modes, indexed like the training set.
  std::optional<BudgetAssignment> budgets;
};

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double na_train = 0.0;
  double ra_train = 0.0;
  double na_val = 0.0;
  double ra_val = 0.0;
};

struct TrainResult {
  Network final_network;
  Network best_network;
  int best_epoch = 0;
  std::vector<EpochMetrics> metrics;
  std::vector<double> batch_losses;
  std::vector<double> lr_log;  // learning rate used in each epoch
};

// Single-buffer Nesterov update: g = grad + wd·p; v = μv + g; p -= lr·(g + μv).
void sgd_step(std::span<double> params, std::span<const double> grads, std::span<double> velocity,
              double lr, double momentum, double weight_decay);

// Momentum buffers for every parameter of a network.
class NesterovSgd {
 public:
  NesterovSgd(const Network& net, double momentum, double weight_decay);
  // Applies one update from the parameters' accumulated gradients; biases skip decay.
  void step(Network& net, double lr);

 private:
  double momentum_;
  double weight_decay_;
  std::vector<std::vector<double>> velocity_;
};

struct ObjectiveValue {
  grad::Tensor total;  // L1_mean + L2_mean / λ, differentiable wrt the student
  double l1 = 0.0;
  double l2 = 0.0;
};

// MMAT objective on one batch: BCE on per-example PGD examples plus teacher logit MSE on
// the natural batch scaled by 1/λ. `teacher == nullptr` uses the detached student.
ObjectiveValue mmat_objective(const Network& student, const Network* teacher, const grad::Tensor& x,
                              std::span<const std::size_t> labels, std::span<const double> budgets,
                              double lambda, const PgdOptions& attack, double step_fraction,
                              std::span<const std::size_t> example_ids = {});

// Runs `config.epochs` epochs from `init` (which is copied). `validation` selects the
// best checkpoint by robust accuracy; when null the training set is used.
TrainResult train(const TrainConfig& config, const Dataset& train_set, const Network& init,
                  const Dataset* validation = nullptr, const MmatSetup* mmat = nullptr);

// "epoch,lr,loss,na_train,ra_train,na_val,ra_val" rows.
std::string metrics_to_csv(std::span<const EpochMetrics> metrics);

}  // namespace mmat
