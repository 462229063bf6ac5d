#include "mmat/training.hpp"

#include <cmath>
#include <sstream>

#include "mmat/errors.hpp"
#include "mmat/evaluation.hpp"
#include "mmat/format.hpp"
#include "mmat/random.hpp"

namespace mmat {

using grad::Tensor;

const char* to_string(Method m) noexcept {
  switch (m) {
    case Method::kNatural: return "natural";
    case Method::kSat: return "sat";
    case Method::kMmat: return "mmat";
  }
  return "?";
}

Method method_from_string(std::string_view name) {
  if (name == "natural") return Method::kNatural;
  if (name == "sat") return Method::kSat;
  if (name == "mmat") return Method::kMmat;
  throw ContractError("unknown training method '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ContractError("train: epochs must be >= 0");
  if (batch_size < 1) throw ContractError("train: batch size must be >= 1");
  if (!(lr > 0.0)) throw ContractError("train: learning rate must be > 0");
  if (!(lambda > 0.0)) throw ContractError("train: lambda must be > 0");
  if (momentum < 0.0 || weight_decay < 0.0) throw ContractError("train: momentum/decay must be >= 0");
  if (attack_iterations < 0) throw ContractError("train: attack iterations must be >= 0");
  if (!(sat_epsilon >= 0.0)) throw ContractError("train: SAT epsilon must be >= 0");
}

double TrainConfig::lr_at(int epoch) const {
  double rate = lr;
  for (const auto& m : milestones)
    if (epoch >= m.epoch) rate *= m.factor;
  return rate;
}

void sgd_step(std::span<double> params, std::span<const double> grads, std::span<double> velocity,
              double lr, double momentum, double weight_decay) {
  if (params.size() != velocity.size() || (!grads.empty() && grads.size() != params.size())) {
    throw DimensionError("sgd_step: buffer sizes differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = (grads.empty() ? 0.0 : grads[i]) + weight_decay * params[i];
    velocity[i] = momentum * velocity[i] + g;
    params[i] -= lr * (g + momentum * velocity[i]);
  }
}

NesterovSgd::NesterovSgd(const Network& net, double momentum, double weight_decay)
    : momentum_(momentum), weight_decay_(weight_decay) {
  for (const auto& p : net.parameters()) velocity_.emplace_back(p.size(), 0.0);
}

void NesterovSgd::step(Network& net, double lr) {
  auto params = net.parameters();
  if (params.size() != velocity_.size()) throw DimensionError("sgd: parameter count changed");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const bool is_weight = i % 2 == 0;
    sgd_step(params[i].mutable_data(), params[i].grad(), velocity_[i], lr, momentum_,
             is_weight ? weight_decay_ : 0.0);
  }
}

ObjectiveValue mmat_objective(const Network& student, const Network* teacher, const Tensor& x,
                              std::span<const std::size_t> labels, std::span<const double> budgets,
                              double lambda, const PgdOptions& attack, double step_fraction,
                              std::span<const std::size_t> example_ids) {
  if (!(lambda > 0.0)) throw ContractError("mmat_objective: lambda must be > 0");
  if (budgets.size() != labels.size()) throw DimensionError("mmat_objective: budgets must cover batch");
  std::vector<double> steps(budgets.size());
  for (std::size_t i = 0; i < steps.size(); ++i) steps[i] = step_fraction * budgets[i];
  const Tensor adv = pgd(student, x, labels, budgets, steps, attack, example_ids);

  Tensor l1 = bce_loss(probs(student.logits(adv)), labels);
  Tensor student_natural = student.logits(x);
  Tensor teacher_logits;
  {
    grad::NoGradGuard no_grad;
    teacher_logits = teacher ? teacher->frozen_logits(x) : student_natural.detach();
  }
  if (teacher && (teacher->input_dim() != student.input_dim() ||
                  teacher->class_count() != student.class_count())) {
    throw DimensionError("mmat_objective: teacher and student dimensions differ");
  }
  Tensor l2 = mse_logits(teacher_logits, student_natural);
  ObjectiveValue out;
  out.l1 = l1.item();
  out.l2 = l2.item();
  out.total = grad::add(l1, grad::scale(l2, 1.0 / lambda));
  return out;
}

namespace {

Fraction robust_metric(const Network& net, const Dataset& data, double epsilon, std::uint64_t seed) {
  return robust_accuracy(net, data, AttackSpec::pgd10_training(epsilon, seed, data.box01()));
}

}  // namespace

TrainResult train(const TrainConfig& config, const Dataset& train_set, const Network& init,
                  const Dataset* validation, const MmatSetup* mmat) {
  config.validate();
  train_set.validate();
  if (train_set.size() == 0) throw DegeneratePartitionError("train: empty dataset");
  if (init.input_dim() != train_set.dim()) throw DimensionError("train: network/dataset dims differ");
  if (config.method == Method::kMmat) {
    if (!mmat) throw ContractError("train: MMAT needs a teacher and a budget source");
    const bool dynamic = mmat->strategy.mode == BudgetMode::kDynamic;
    if (!dynamic && !mmat->budgets) throw ContractError("train: MMAT needs a budget assignment");
    if (mmat->budgets && mmat->budgets->eps.size() != train_set.size()) {
      throw DimensionError("train: budget assignment does not cover the training set");
    }
  }

  const Dataset& val = validation ? *validation : train_set;
  const double metric_eps = config.metric_epsilon > 0.0 ? config.metric_epsilon : train_set.base_epsilon;
  const std::uint64_t metric_seed = rng::derive(config.seed, "metrics");

  TrainResult result;
  Network net = init.clone();
  NesterovSgd optimizer(net, config.momentum, config.weight_decay);
  double best_ra = -1.0;
  result.best_network = net.clone();

  std::vector<double> epoch_budgets;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = config.lr_at(epoch);
    result.lr_log.push_back(lr);
    const std::uint64_t attack_seed = rng::derive(config.seed, "attack", {static_cast<std::uint64_t>(epoch)});

    if (config.method == Method::kMmat) {
      epoch_budgets = mmat->strategy.mode == BudgetMode::kDynamic
                          ? assign_budgets(net, train_set, mmat->strategy).eps
                          : mmat->budgets->eps;
    }

    double loss_sum = 0.0;
    const auto order = batches(train_set.size(), config.batch_size, config.seed, epoch);
    for (std::size_t b = 0; b < order.size(); ++b) {
      const auto& ids = order[b];
      const Tensor x = train_set.examples.gather_rows(ids);
      std::vector<std::size_t> y(ids.size());
      for (std::size_t i = 0; i < ids.size(); ++i) y[i] = train_set.labels[ids[i]];

      Tensor loss;
      switch (config.method) {
        case Method::kNatural:
          loss = ce_loss(probs(net.logits(x)), y);
          break;
        case Method::kSat: {
          const std::vector<double> budgets(ids.size(), config.sat_epsilon);
          const std::vector<double> steps(ids.size(), config.attack_step_fraction * config.sat_epsilon);
          const Tensor adv = pgd(net, x, y, budgets, steps,
                                 {config.attack_iterations, config.random_start, attack_seed,
                                  train_set.box01(), LossKind::kCe},
                                 ids);
          loss = loss_from_logits(config.sat_loss, net.logits(adv), y);
          break;
        }
        case Method::kMmat: {
          std::vector<double> budgets(ids.size());
          for (std::size_t i = 0; i < ids.size(); ++i) budgets[i] = epoch_budgets[ids[i]];
          const Network* teacher = mmat->teacher.network ? &*mmat->teacher.network : nullptr;
          loss = mmat_objective(net, teacher, x, y, budgets, config.lambda,
                                {config.attack_iterations, config.random_start, attack_seed,
                                 train_set.box01(), LossKind::kCe},
                                config.attack_step_fraction, ids)
                     .total;
          break;
        }
      }
      const double value = loss.item();
      if (!std::isfinite(value)) throw DivergenceError(epoch, b);
      result.batch_losses.push_back(value);
      loss_sum += value;

      net.zero_grad();
      loss.backward();
      optimizer.step(net, lr);
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr;
    m.loss = order.empty() ? 0.0 : loss_sum / static_cast<double>(order.size());
    m.na_train = natural_accuracy(net, train_set).value();
    m.na_val = natural_accuracy(net, val).value();
    if (config.robust_metrics) {
      m.ra_train = robust_metric(net, train_set, metric_eps, metric_seed).value();
      m.ra_val = validation ? robust_metric(net, val, metric_eps, metric_seed).value() : m.ra_train;
      if (m.ra_val > best_ra) {
        best_ra = m.ra_val;
        result.best_network = net.clone();
        result.best_epoch = epoch;
      }
    } else {
      result.best_network = net.clone();
      result.best_epoch = epoch;
    }
    result.metrics.push_back(m);
  }
  result.final_network = std::move(net);
  return result;
}

std::string metrics_to_csv(std::span<const EpochMetrics> metrics) {
  std::ostringstream os;
  os << "epoch,lr,loss,na_train,ra_train,na_val,ra_val\n";
  for (const auto& m : metrics) {
    os << m.epoch << ',' << format_double(m.lr) << ',' << format_double(m.loss) << ','
       << format_double(m.na_train) << ',' << format_double(m.ra_train) << ','
       << format_double(m.na_val) << ',' << format_double(m.ra_val) << '\n';
  }
  return os.str();
}

}  // namespace mmat
