#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmat/attacks.hpp"
#include "mmat/data.hpp"
#include "mmat/nets.hpp"

namespace mmat {

enum class Grade { kA, kB, kC, kMisclassified };

const char* to_string(Grade g) noexcept;

struct IndexedValue {
  std::size_t index = 0;
  double value = 0.0;  // margin or z_max
};

struct GradeEntry {
  std::size_t index = 0;
  Grade grade = Grade::kA;
  double value = 0.0;  // margin or z_max; NaN for misclassified / not-found
  double eps = 0.0;
};

struct GradeTable {
  enum class Mode { kMargin, kZmax };
  Mode mode = Mode::kMargin;
  double threshold_low = 0.0;   // M_P40 or Z1
  double threshold_high = 0.0;  // M_P70 or Z2
  std::array<double, 3> budgets{};  // ε_A, ε_B, ε_C
  std::vector<GradeEntry> entries;  // sorted by example index

  std::array<std::size_t, 4> counts() const;
  // "index,grade,margin_or_zmax,eps" rows.
  std::string to_csv() const;
  // e.g. "Z1=2 Z2=6 eps=5/255,10/255,15/255 A=.. B=.. C=.. MISCLASSIFIED=.."
  std::string summary() const;
};

// Nearest-rank percentile position: the ceil(p·n)-th order statistic (1-based), at least 1.
std::size_t nearest_rank(double p, std::size_t n);

// Sort ascending, threshold at nearest-rank percentiles, grade with m <= threshold,
// ε_A = max over A, ε_B = mean over B (ascending summation), ε_C = min over C.
// DegeneratePartitionError on empty input or any empty grade.
GradeTable grade_by_margin(std::span<const IndexedValue> margins,
                           std::array<double, 2> fractions = {0.40, 0.70});

// A: z <= Z1, B: Z1 < z <= Z2, C: z > Z2; budgets as given.
GradeTable grade_by_zmax(std::span<const IndexedValue> zmax, double z1, double z2,
                         std::array<double, 3> budgets);

enum class BudgetMode { kMarginStatic, kZmaxStatic, kDynamic, kUniform };

const char* to_string(BudgetMode m) noexcept;
BudgetMode budget_mode_from_string(std::string_view name);

struct StrategyParams {
  BudgetMode mode = BudgetMode::kZmaxStatic;
  // Grading rule applied by the dynamic mode and by assign_budgets.
  GradeTable::Mode grading = GradeTable::Mode::kZmax;
  std::array<double, 2> fractions = {0.40, 0.70};
  double z1 = 2.0;
  double z2 = 6.0;
  std::array<double, 3> budgets = {5.0 / 255, 10.0 / 255, 15.0 / 255};
  double uniform_epsilon = 0.0;  // kUniform only
  DeepFoolOptions deepfool;

  // Budget triple (5, 10, 15)/8 × base ε, the desk analogue of (5, 10, 15)/255 at ε = 8/255.
  static std::array<double, 3> scaled_budgets(double base_epsilon);
};

struct BudgetAssignment {
  std::vector<double> eps;  // one per dataset example; 0 exactly for misclassified
  BudgetMode source = BudgetMode::kZmaxStatic;
  std::string strategy_id;
  GradeTable table;
};

// Grades every example of `data` with `strategy`: misclassified examples get ε = 0;
// correctly classified ones are graded by margin (DeepFool; not-found -> C) or z_max.
BudgetAssignment assign_budgets(const Network& strategy, const Dataset& data,
                                const StrategyParams& params, std::string strategy_id = "");

// Same grading on the live network for one batch of examples.
std::vector<double> dynamic_regrade(const Network& current, const grad::Tensor& x,
                                    std::span<const std::size_t> labels,
                                    const StrategyParams& params);

}  // namespace mmat
