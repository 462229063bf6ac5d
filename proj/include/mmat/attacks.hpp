#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmat/losses.hpp"
#include "mmat/nets.hpp"
#include "mmat/tensor.hpp"

namespace mmat {

enum class AttackFamily { kFgsm, kPgd, kCwPgd };

const char* to_string(AttackFamily f) noexcept;
AttackFamily attack_family_from_string(std::string_view name);

// Standard deviation of the Gaussian random start.
inline constexpr double kRandomStartScale = 0.001;

struct AttackSpec {
  AttackFamily family = AttackFamily::kPgd;
  double epsilon = 0.0;
  double step = 0.0;       // α; ignored by FGSM
  int iterations = 0;      // T; ignored by FGSM
  bool random_start = false;
  LossKind loss = LossKind::kCe;
  std::uint64_t seed = 0;
  bool box01 = false;

  void validate() const;

  // T = 20, α = ε/10, random start.
  static AttackSpec pgd20(double epsilon, std::uint64_t seed, bool box01);
  // T = 10, α = ε/4, random start.
  static AttackSpec pgd10_training(double epsilon, std::uint64_t seed, bool box01);
  static AttackSpec fgsm(double epsilon, bool box01);
  static AttackSpec cw_pgd20(double epsilon, std::uint64_t seed, bool box01);
};

struct PgdOptions {
  int iterations = 10;
  bool random_start = true;
  std::uint64_t seed = 0;
  bool box01 = false;
  LossKind loss = LossKind::kCe;  // kCw descends the CW margin instead of ascending
};

// x' = clip_box(x + ε·sign(∇x CE)).
grad::Tensor fgsm(const Network& net, const grad::Tensor& x, std::span<const std::size_t> labels,
                  double epsilon, bool box01 = false);

// Projected sign-gradient ascent with one budget and one step per example.
// Row i draws its random start from a stream keyed on (seed, example_ids[i]);
// example_ids defaults to the row index.
grad::Tensor pgd(const Network& net, const grad::Tensor& x, std::span<const std::size_t> labels,
                 std::span<const double> budgets, std::span<const double> steps,
                 const PgdOptions& options, std::span<const std::size_t> example_ids = {});

grad::Tensor cw_pgd(const Network& net, const grad::Tensor& x, std::span<const std::size_t> labels,
                    double epsilon, double step, int iterations, bool random_start = false,
                    std::uint64_t seed = 0, bool box01 = false,
                    std::span<const std::size_t> example_ids = {});

// Dispatch on spec.family with a uniform budget.
grad::Tensor run_attack(const Network& net, const grad::Tensor& x,
                        std::span<const std::size_t> labels, const AttackSpec& spec,
                        std::span<const std::size_t> example_ids = {});

// ---- margins -------------------------------------------------------------------

enum class DeepFoolSpace {
  kProbability,  // softmax differences, step along the raw gradient difference, L1 denominator
  kLogit,        // logit differences, L∞-optimal sign step, L1 denominator
};

struct DeepFoolOptions {
  int max_iter = 50;
  double overshoot = 1.02;  // applied to the accumulated perturbation before each check
  DeepFoolSpace space = DeepFoolSpace::kLogit;
  // Bisect the final step back to the first crossing before the overshoot is applied.
  bool line_search = true;
};

struct MarginEstimate {
  bool found = false;
  double margin = 0.0;                       // ‖δ‖∞ when found
  std::optional<std::vector<double>> delta;  // present iff found
  int iterations = 0;
};

// Iterative linearized push across the nearest boundary of predict(x).
// Throws DegenerateGeometryError when a gradient difference has L1 norm < 1e-12.
MarginEstimate deepfool_margin(const Network& net, std::span<const double> x,
                               const DeepFoolOptions& options = {});

// Unit-L2 direction of the PGD-20 perturbation (no random start) at budget ε.
std::vector<double> adversarial_direction(const Network& net, std::span<const double> x,
                                          std::size_t label, double epsilon, bool box01 = false);

// Smallest |a| <= t_max with predict(x + a·v) != predict(x), scanned on both signs and
// refined by bisection to `tol`. nullopt when no flip is found.
std::optional<double> margin_along(const Network& net, std::span<const double> x,
                                   std::span<const double> v, double t_max, double tol = 1e-9);

// Same as margin_along but for a direction of any norm, measured in units of that direction.
std::optional<double> first_flip_along(const Network& net, std::span<const double> x,
                                       std::span<const double> direction, double t_max,
                                       double tol = 1e-9);

struct AttackRecord {
  std::size_t index = 0;
  double eps = 0.0;
  double linf = 0.0;
  bool success = false;
  int iterations = 0;
};

std::string attack_records_to_json(std::span<const AttackRecord> records);

// L∞ distance between row i of a and b.
double row_linf(const grad::Tensor& a, const grad::Tensor& b, std::size_t row);

}  // namespace mmat
