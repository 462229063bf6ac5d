#include "mmat/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

#include "mmat/errors.hpp"
#include "mmat/random.hpp"

namespace mmat {

using grad::Tensor;

namespace {

// Gap added to |f| in a DeepFool step so points sitting exactly on a tie still move.
constexpr double kDeepFoolMinGap = 1e-6;
constexpr int kLineSearchSteps = 60;
constexpr double kDegenerateNorm = 1e-12;
constexpr int kScanSteps = 256;

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void check_batch(const Network& net, const Tensor& x, std::span<const std::size_t> labels) {
  if (x.rank() != 2 || x.cols() != net.input_dim()) {
    throw DimensionError("attack: input " + grad::shape_string(x.shape()) +
                         " does not match network input_dim " + std::to_string(net.input_dim()));
  }
  if (labels.size() != x.rows()) throw DimensionError("attack: one label per row required");
  for (auto y : labels)
    if (y >= net.class_count()) throw ContractError("attack: label out of range");
}

std::size_t example_id(std::span<const std::size_t> ids, std::size_t row) {
  return ids.empty() ? row : ids[row];
}

std::size_t predict_row(const Network& net, std::span<const double> x) {
  grad::NoGradGuard no_grad;
  const Tensor z = net.frozen_logits(Tensor({1, x.size()}, std::vector<double>(x.begin(), x.end())));
  return argmax_rows(z)[0];
}

// Values f_k(x) and their input gradients, one row per class.
struct ClassJacobian {
  std::vector<double> values;
  std::vector<std::vector<double>> grads;
};

ClassJacobian class_jacobian(const Network& net, std::span<const double> x, DeepFoolSpace space) {
  Tensor probe({1, x.size()}, std::vector<double>(x.begin(), x.end()));
  probe.set_requires_grad(true);
  Tensor out = net.frozen_logits(probe);
  if (space == DeepFoolSpace::kProbability) out = grad::softmax_rows(out);
  const std::size_t k = out.cols();
  ClassJacobian jac;
  jac.values.assign(out.data().begin(), out.data().end());
  jac.grads.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    probe.zero_grad();
    const std::size_t col[] = {c};
    grad::sum(grad::pick(out, col)).backward();
    jac.grads[c].assign(probe.grad().begin(), probe.grad().end());
  }
  return jac;
}

}  // namespace

const char* to_string(AttackFamily f) noexcept {
  switch (f) {
    case AttackFamily::kFgsm: return "fgsm";
    case AttackFamily::kPgd: return "pgd";
    case AttackFamily::kCwPgd: return "cw-pgd";
  }
  return "?";
}

AttackFamily attack_family_from_string(std::string_view name) {
  if (name == "fgsm") return AttackFamily::kFgsm;
  if (name == "pgd") return AttackFamily::kPgd;
  if (name == "cw-pgd" || name == "cw") return AttackFamily::kCwPgd;
  throw ContractError("unknown attack family '" + std::string(name) + "'");
}

void AttackSpec::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ContractError("attack: epsilon must be >= 0");
  if (iterations < 0) throw ContractError("attack: iterations must be >= 0");
  if (family != AttackFamily::kFgsm && iterations > 0 && epsilon > 0.0 && !(step > 0.0)) {
    throw ContractError("attack: step must be > 0 when iterations > 0");
  }
}

AttackSpec AttackSpec::pgd20(double epsilon, std::uint64_t seed, bool box01) {
  return {AttackFamily::kPgd, epsilon, epsilon / 10.0, 20, true, LossKind::kCe, seed, box01};
}

AttackSpec AttackSpec::pgd10_training(double epsilon, std::uint64_t seed, bool box01) {
  return {AttackFamily::kPgd, epsilon, epsilon / 4.0, 10, true, LossKind::kCe, seed, box01};
}

AttackSpec AttackSpec::fgsm(double epsilon, bool box01) {
  return {AttackFamily::kFgsm, epsilon, epsilon, 1, false, LossKind::kCe, 0, box01};
}

AttackSpec AttackSpec::cw_pgd20(double epsilon, std::uint64_t seed, bool box01) {
  return {AttackFamily::kCwPgd, epsilon, epsilon / 10.0, 20, true, LossKind::kCw, seed, box01};
}

Tensor fgsm(const Network& net, const Tensor& x, std::span<const std::size_t> labels,
            double epsilon, bool box01) {
  check_batch(net, x, labels);
  if (!(epsilon >= 0.0)) throw ContractError("fgsm: epsilon must be >= 0");
  Tensor out = x.clone();
  if (epsilon == 0.0) return out;
  const Tensor g = input_gradient(net, x, labels, LossKind::kCe);
  auto v = out.mutable_data();
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] += epsilon * sign(g[i]);
    if (box01) v[i] = std::min(std::max(v[i], 0.0), 1.0);
  }
  return out;
}

Tensor pgd(const Network& net, const Tensor& x, std::span<const std::size_t> labels,
           std::span<const double> budgets, std::span<const double> steps,
           const PgdOptions& options, std::span<const std::size_t> example_ids) {
  check_batch(net, x, labels);
  const std::size_t n = x.rows(), d = x.cols();
  if (budgets.size() != n || steps.size() != n) {
    throw DimensionError("pgd: need one budget and one step per example");
  }
  if (!example_ids.empty() && example_ids.size() != n) {
    throw DimensionError("pgd: need one example id per row");
  }
  if (options.iterations < 0) throw ContractError("pgd: iterations must be >= 0");
  for (std::size_t i = 0; i < n; ++i) {
    if (!(budgets[i] >= 0.0) || !std::isfinite(budgets[i])) {
      throw ContractError("pgd: budget of row " + std::to_string(i) + " must be finite and >= 0");
    }
    if (options.iterations > 0 && budgets[i] > 0.0 && !(steps[i] > 0.0)) {
      throw ContractError("pgd: step of row " + std::to_string(i) + " must be > 0");
    }
  }

  const auto x0 = x.data();
  std::vector<double> lo(n * d), hi(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      lo[i * d + j] = x0[i * d + j] - budgets[i];
      hi[i * d + j] = x0[i * d + j] + budgets[i];
    }
  }
  auto project = [&](std::span<double> v) {
    for (std::size_t k = 0; k < v.size(); ++k) {
      v[k] = std::min(std::max(v[k], lo[k]), hi[k]);
      if (options.box01) v[k] = std::min(std::max(v[k], 0.0), 1.0);
    }
  };

  Tensor adv = x.clone();
  auto a = adv.mutable_data();
  if (options.random_start) {
    for (std::size_t i = 0; i < n; ++i) {
      CounterRng rng(rng::derive(options.seed, "pgd-start", {example_id(example_ids, i)}));
      for (std::size_t j = 0; j < d; ++j) a[i * d + j] += kRandomStartScale * rng.normal();
    }
    project(a);
  }
  const double direction = options.loss == LossKind::kCw ? -1.0 : 1.0;
  for (int t = 0; t < options.iterations; ++t) {
    const Tensor g = input_gradient(net, adv, labels, options.loss);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) a[i * d + j] += direction * steps[i] * sign(g[i * d + j]);
    }
    project(a);
  }
  return adv;
}

Tensor cw_pgd(const Network& net, const Tensor& x, std::span<const std::size_t> labels,
              double epsilon, double step, int iterations, bool random_start, std::uint64_t seed,
              bool box01, std::span<const std::size_t> example_ids) {
  const std::vector<double> budgets(x.rows(), epsilon), steps(x.rows(), step);
  return pgd(net, x, labels, budgets, steps,
             {iterations, random_start, seed, box01, LossKind::kCw}, example_ids);
}

Tensor run_attack(const Network& net, const Tensor& x, std::span<const std::size_t> labels,
                  const AttackSpec& spec, std::span<const std::size_t> example_ids) {
  spec.validate();
  switch (spec.family) {
    case AttackFamily::kFgsm: return fgsm(net, x, labels, spec.epsilon, spec.box01);
    case AttackFamily::kPgd:
    case AttackFamily::kCwPgd: {
      const std::vector<double> budgets(x.rows(), spec.epsilon), steps(x.rows(), spec.step);
      const LossKind loss = spec.family == AttackFamily::kCwPgd ? LossKind::kCw : spec.loss;
      return pgd(net, x, labels, budgets, steps,
                 {spec.iterations, spec.random_start, spec.seed, spec.box01, loss}, example_ids);
    }
  }
  throw ContractError("run_attack: unknown family");
}

// ---- margins -------------------------------------------------------------------

MarginEstimate deepfool_margin(const Network& net, std::span<const double> x,
                               const DeepFoolOptions& options) {
  if (x.size() != net.input_dim()) throw DimensionError("deepfool: input dimension mismatch");
  if (options.max_iter < 1) throw ContractError("deepfool: max_iter must be >= 1");
  const std::size_t d = x.size();
  const std::size_t origin = predict_row(net, x);
  std::vector<double> total(d, 0.0), step(d), point(d);

  MarginEstimate est;
  for (int iter = 0; iter < options.max_iter; ++iter) {
    for (std::size_t j = 0; j < d; ++j) point[j] = x[j] + options.overshoot * total[j];
    const ClassJacobian jac = class_jacobian(net, point, options.space);

    // Nearest boundary under the linearization: minimize |f_k - f_y| / ‖∇f_k - ∇f_y‖₁.
    std::size_t best = jac.values.size();
    double best_ratio = 0.0, best_norm = 0.0;
    for (std::size_t k = 0; k < jac.values.size(); ++k) {
      if (k == origin) continue;
      double norm = 0.0;
      for (std::size_t j = 0; j < d; ++j) norm += std::abs(jac.grads[k][j] - jac.grads[origin][j]);
      if (norm < kDegenerateNorm) continue;
      const double ratio = std::abs(jac.values[k] - jac.values[origin]) / norm;
      if (best == jac.values.size() || ratio < best_ratio) {
        best = k;
        best_ratio = ratio;
        best_norm = norm;
      }
    }
    if (best == jac.values.size()) {
      throw DegenerateGeometryError("deepfool: gradient differences vanish (L1 norm < 1e-12)");
    }
    const double gap = std::abs(jac.values[best] - jac.values[origin]) + kDeepFoolMinGap;
    for (std::size_t j = 0; j < d; ++j) {
      const double w = jac.grads[best][j] - jac.grads[origin][j];
      step[j] = options.space == DeepFoolSpace::kProbability ? gap / best_norm * w
                                                             : gap / best_norm * sign(w);
    }
    est.iterations = iter + 1;

    auto flips_at = [&](double s, double scale) {
      for (std::size_t j = 0; j < d; ++j) point[j] = x[j] + scale * (total[j] + s * step[j]);
      return predict_row(net, point) != origin;
    };
    if (flips_at(1.0, options.overshoot)) {
      double s = 1.0;
      if (options.line_search) {
        // Shrink the last step to the first crossing; curved boundaries make it overshoot.
        double lo = 0.0, hi = 1.0;
        for (int k = 0; k < kLineSearchSteps; ++k) {
          const double mid = 0.5 * (lo + hi);
          if (flips_at(mid, 1.0)) hi = mid; else lo = mid;
        }
        if (flips_at(hi, options.overshoot)) s = hi;
      }
      for (std::size_t j = 0; j < d; ++j) total[j] += s * step[j];
      for (std::size_t j = 0; j < d; ++j) point[j] = x[j] + options.overshoot * total[j];
      std::vector<double> delta(d);
      double linf = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        delta[j] = point[j] - x[j];
        linf = std::max(linf, std::abs(delta[j]));
      }
      est.found = true;
      est.margin = linf;
      est.delta = std::move(delta);
      return est;
    }
    for (std::size_t j = 0; j < d; ++j) total[j] += step[j];
  }
  return est;
}

std::vector<double> adversarial_direction(const Network& net, std::span<const double> x,
                                          std::size_t label, double epsilon, bool box01) {
  if (!(epsilon > 0.0)) throw ContractError("adversarial_direction: epsilon must be > 0");
  const Tensor row({1, x.size()}, std::vector<double>(x.begin(), x.end()));
  const std::size_t labels[] = {label};
  const double budgets[] = {epsilon};
  const double steps[] = {epsilon / 10.0};
  const Tensor adv = pgd(net, row, labels, budgets, steps, {20, false, 0, box01, LossKind::kCe});
  std::vector<double> v(x.size());
  double norm = 0.0;
  for (std::size_t j = 0; j < v.size(); ++j) {
    v[j] = adv[j] - x[j];
    norm += v[j] * v[j];
  }
  norm = std::sqrt(norm);
  if (norm == 0.0) throw ContractError("adversarial_direction: zero perturbation, no direction");
  for (double& e : v) e /= norm;
  return v;
}

std::optional<double> first_flip_along(const Network& net, std::span<const double> x,
                                       std::span<const double> direction, double t_max,
                                       double tol) {
  if (direction.size() != x.size()) throw DimensionError("margin_along: direction size mismatch");
  if (!(t_max > 0.0) || !(tol > 0.0)) throw ContractError("margin_along: t_max and tol must be > 0");
  const std::size_t origin = predict_row(net, x);
  std::vector<double> p(x.size());
  auto flips = [&](double a) {
    for (std::size_t j = 0; j < x.size(); ++j) p[j] = x[j] + a * direction[j];
    return predict_row(net, p) != origin;
  };
  auto bisect = [&](double lo, double hi, double s) {
    while (hi - lo > tol) {
      const double mid = 0.5 * (lo + hi);
      if (flips(s * mid)) hi = mid; else lo = mid;
    }
    return hi;
  };
  double prev = 0.0;
  for (int k = 1; k <= kScanSteps; ++k) {
    const double t = t_max * k / kScanSteps;
    const bool pos = flips(t), negv = flips(-t);
    if (pos || negv) {
      double best = t;
      if (pos) best = std::min(best, bisect(prev, t, 1.0));
      if (negv) best = std::min(best, bisect(prev, t, -1.0));
      return best;
    }
    prev = t;
  }
  return std::nullopt;
}

std::optional<double> margin_along(const Network& net, std::span<const double> x,
                                   std::span<const double> v, double t_max, double tol) {
  double norm = 0.0;
  for (double e : v) norm += e * e;
  if (std::abs(std::sqrt(norm) - 1.0) > 1e-9) throw ContractError("margin_along: v must be a unit vector");
  return first_flip_along(net, x, v, t_max, tol);
}

std::string attack_records_to_json(std::span<const AttackRecord> records) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : records) {
    arr.push_back({{"index", r.index}, {"eps", r.eps}, {"linf", r.linf},
                   {"success", r.success}, {"iterations", r.iterations}});
  }
  return arr.dump(1) + "\n";
}

double row_linf(const Tensor& a, const Tensor& b, std::size_t row) {
  const std::size_t d = a.cols();
  double m = 0.0;
  for (std::size_t j = 0; j < d; ++j) m = std::max(m, std::abs(a.at(row, j) - b.at(row, j)));
  return m;
}

}  // namespace mmat
