#pragma once

#include <cstddef>
#include <span>

#include "mmat/tensor.hpp"

namespace mmat {

enum class LossKind { kCe, kBce, kCw };

const char* to_string(LossKind kind) noexcept;
LossKind loss_kind_from_string(std::string_view name);

// Probabilities below this are clamped before taking logs.
inline constexpr double kProbabilityFloor = 1e-12;

// Number of entries clamped to kProbabilityFloor on this thread since the last reset.
std::size_t probability_floor_hits() noexcept;
void reset_probability_floor_hits() noexcept;

// Batch losses below take a [batch×K] tensor and return the batch mean as a scalar.

// -log p_y
grad::Tensor ce_loss(const grad::Tensor& probs, std::span<const std::size_t> labels);

// -log p_y - log(1 - max_{k != y} p_k)
grad::Tensor bce_loss(const grad::Tensor& probs, std::span<const std::size_t> labels);

// ||z_t - z_s||² summed over classes, averaged over the batch.
grad::Tensor mse_logits(const grad::Tensor& teacher_logits, const grad::Tensor& student_logits);

// max(z_y - max_{k != y} z_k, -kappa); an attacker minimizes it.
grad::Tensor cw_loss(const grad::Tensor& logits, std::span<const std::size_t> labels,
                     double kappa = 0.0);

// Loss of `kind` evaluated from logits (CE/BCE go through softmax first).
grad::Tensor loss_from_logits(LossKind kind, const grad::Tensor& logits,
                              std::span<const std::size_t> labels);

// Single-row conveniences used in tests and reports.
double ce_loss(std::span<const double> probs, std::size_t label);
double bce_loss(std::span<const double> probs, std::size_t label);

// Index of the largest entry of row `row` other than `exclude`; ties go to the lowest index.
std::size_t argmax_excluding(std::span<const double> row, std::size_t exclude);

}  // namespace mmat
