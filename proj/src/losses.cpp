#include "mmat/losses.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "mmat/errors.hpp"

namespace mmat {

using grad::Tensor;

namespace {

thread_local std::size_t t_floor_hits = 0;

void check_labels(const Tensor& t, std::span<const std::size_t> labels, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected [batch x K] input");
  if (labels.size() != t.rows()) {
    throw DimensionError(std::string(op) + ": " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(t.rows()));
  }
  for (auto y : labels) {
    if (y >= t.cols()) {
      throw ContractError(std::string(op) + ": label " + std::to_string(y) +
                          " outside [0, " + std::to_string(t.cols()) + ")");
    }
  }
}

// -log(max(v, floor)) elementwise, counting clamps.
Tensor neg_log_floored(const Tensor& v) {
  for (double e : v.data())
    if (e < kProbabilityFloor) ++t_floor_hits;
  return grad::neg(grad::log(grad::clamp_min(v, kProbabilityFloor)));
}

std::vector<std::size_t> runner_up(const Tensor& t, std::span<const std::size_t> labels) {
  std::vector<std::size_t> idx(labels.size());
  const std::size_t k = t.cols();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    idx[i] = argmax_excluding(t.data().subspan(i * k, k), labels[i]);
  }
  return idx;
}

}  // namespace

const char* to_string(LossKind kind) noexcept {
  switch (kind) {
    case LossKind::kCe: return "ce";
    case LossKind::kBce: return "bce";
    case LossKind::kCw: return "cw";
  }
  return "?";
}

LossKind loss_kind_from_string(std::string_view name) {
  if (name == "ce") return LossKind::kCe;
  if (name == "bce") return LossKind::kBce;
  if (name == "cw") return LossKind::kCw;
  throw ContractError("unknown loss kind '" + std::string(name) + "'");
}

std::size_t probability_floor_hits() noexcept { return t_floor_hits; }
void reset_probability_floor_hits() noexcept { t_floor_hits = 0; }

std::size_t argmax_excluding(std::span<const double> row, std::size_t exclude) {
  std::size_t best = row.size();
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (j == exclude) continue;
    if (best == row.size() || row[j] > row[best]) best = j;
  }
  if (best == row.size()) throw ContractError("argmax_excluding: need at least two classes");
  return best;
}

Tensor ce_loss(const Tensor& probs, std::span<const std::size_t> labels) {
  check_labels(probs, labels, "ce_loss");
  return grad::mean(neg_log_floored(grad::pick(probs, labels)));
}

Tensor bce_loss(const Tensor& probs, std::span<const std::size_t> labels) {
  check_labels(probs, labels, "bce_loss");
  if (probs.cols() < 2) throw ContractError("bce_loss: need K >= 2");
  const auto other = runner_up(probs, labels);
  Tensor true_term = neg_log_floored(grad::pick(probs, labels));
  Tensor rest = grad::add_scalar(grad::neg(grad::pick(probs, other)), 1.0);
  Tensor margin_term = neg_log_floored(rest);
  return grad::mean(grad::add(true_term, margin_term));
}

Tensor mse_logits(const Tensor& teacher_logits, const Tensor& student_logits) {
  if (teacher_logits.shape() != student_logits.shape() || teacher_logits.rank() != 2) {
    throw DimensionError("mse_logits: shape mismatch " + grad::shape_string(teacher_logits.shape()) +
                         " vs " + grad::shape_string(student_logits.shape()));
  }
  Tensor diff = grad::sub(student_logits, teacher_logits);
  return grad::mean(grad::sum_rows(grad::square(diff)));
}

Tensor cw_loss(const Tensor& logits, std::span<const std::size_t> labels, double kappa) {
  check_labels(logits, labels, "cw_loss");
  const auto other = runner_up(logits, labels);
  Tensor gap = grad::sub(grad::pick(logits, labels), grad::pick(logits, other));
  // max(gap, -kappa): clamp_min passes the gradient only where gap > -kappa.
  return grad::mean(grad::clamp_min(gap, -kappa));
}

Tensor loss_from_logits(LossKind kind, const Tensor& logits, std::span<const std::size_t> labels) {
  switch (kind) {
    case LossKind::kCe: return ce_loss(grad::softmax_rows(logits), labels);
    case LossKind::kBce: return bce_loss(grad::softmax_rows(logits), labels);
    case LossKind::kCw: return cw_loss(logits, labels);
  }
  throw ContractError("loss_from_logits: unknown kind");
}

double ce_loss(std::span<const double> probs, std::size_t label) {
  if (label >= probs.size()) throw ContractError("ce_loss: label out of range");
  const double p = probs[label];
  if (p < kProbabilityFloor) ++t_floor_hits;
  return -std::log(std::max(p, kProbabilityFloor));
}

double bce_loss(std::span<const double> probs, std::size_t label) {
  const double ce = ce_loss(probs, label);
  const double rest = 1.0 - probs[argmax_excluding(probs, label)];
  if (rest < kProbabilityFloor) ++t_floor_hits;
  return ce - std::log(std::max(rest, kProbabilityFloor));
}

}  // namespace mmat
