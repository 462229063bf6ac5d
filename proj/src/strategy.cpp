#include "mmat/strategy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "mmat/errors.hpp"
#include "mmat/format.hpp"

namespace mmat {

using grad::Tensor;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Prepared {
  std::vector<IndexedValue> sorted;  // ascending by value, then index
};

Prepared sort_values(std::span<const IndexedValue> values) {
  Prepared p{{values.begin(), values.end()}};
  std::sort(p.sorted.begin(), p.sorted.end(), [](const IndexedValue& a, const IndexedValue& b) {
    return a.value != b.value ? a.value < b.value : a.index < b.index;
  });
  return p;
}

void sort_entries(GradeTable& t) {
  std::sort(t.entries.begin(), t.entries.end(),
            [](const GradeEntry& a, const GradeEntry& b) { return a.index < b.index; });
}

}  // namespace

const char* to_string(Grade g) noexcept {
  switch (g) {
    case Grade::kA: return "A";
    case Grade::kB: return "B";
    case Grade::kC: return "C";
    case Grade::kMisclassified: return "MISCLASSIFIED";
  }
  return "?";
}

const char* to_string(BudgetMode m) noexcept {
  switch (m) {
    case BudgetMode::kMarginStatic: return "margin-static";
    case BudgetMode::kZmaxStatic: return "zmax-static";
    case BudgetMode::kDynamic: return "dynamic";
    case BudgetMode::kUniform: return "uniform";
  }
  return "?";
}

BudgetMode budget_mode_from_string(std::string_view name) {
  if (name == "margin-static") return BudgetMode::kMarginStatic;
  if (name == "zmax-static") return BudgetMode::kZmaxStatic;
  if (name == "dynamic") return BudgetMode::kDynamic;
  if (name == "uniform") return BudgetMode::kUniform;
  throw ContractError("unknown budget mode '" + std::string(name) + "'");
}

std::array<std::size_t, 4> GradeTable::counts() const {
  std::array<std::size_t, 4> c{};
  for (const auto& e : entries) ++c[static_cast<std::size_t>(e.grade)];
  return c;
}

std::string GradeTable::to_csv() const {
  std::ostringstream os;
  os << "index,grade,margin_or_zmax,eps\n";
  for (const auto& e : entries) {
    os << e.index << ',' << to_string(e.grade) << ','
       << (std::isnan(e.value) ? std::string() : format_double(e.value)) << ','
       << format_budget(e.eps) << '\n';
  }
  return os.str();
}

std::string GradeTable::summary() const {
  std::ostringstream os;
  if (mode == Mode::kZmax) {
    os << "Z1=" << format_double(threshold_low) << " Z2=" << format_double(threshold_high);
  } else {
    os << "M_P40=" << format_budget(threshold_low) << " M_P70=" << format_budget(threshold_high);
  }
  os << " eps=" << format_budget(budgets[0]) << ',' << format_budget(budgets[1]) << ','
     << format_budget(budgets[2]);
  const auto c = counts();
  os << " A=" << c[0] << " B=" << c[1] << " C=" << c[2] << " MISCLASSIFIED=" << c[3];
  return os.str();
}

std::size_t nearest_rank(double p, std::size_t n) {
  if (n == 0) throw DegeneratePartitionError("nearest_rank: empty sample");
  // The 1e-9 slack absorbs representation error in p·n (0.7·10 must give 7, not 8).
  const double r = std::ceil(p * static_cast<double>(n) - 1e-9);
  return std::clamp<std::size_t>(r < 1.0 ? 1 : static_cast<std::size_t>(r), 1, n);
}

GradeTable grade_by_margin(std::span<const IndexedValue> margins, std::array<double, 2> fractions) {
  if (margins.empty()) throw DegeneratePartitionError("grade_by_margin: no margins");
  for (const auto& m : margins) {
    if (!(m.value >= 0.0)) throw ContractError("grade_by_margin: margins must be >= 0");
  }
  const auto sorted = sort_values(margins).sorted;
  const std::size_t n = sorted.size();
  GradeTable t;
  t.mode = GradeTable::Mode::kMargin;
  t.threshold_low = sorted[nearest_rank(fractions[0], n) - 1].value;
  t.threshold_high = sorted[nearest_rank(fractions[1], n) - 1].value;

  double max_a = 0.0, sum_b = 0.0, min_c = 0.0;
  std::size_t na = 0, nb = 0, nc = 0;
  for (const auto& m : sorted) {
    if (m.value <= t.threshold_low) {
      max_a = na++ ? std::max(max_a, m.value) : m.value;
      t.entries.push_back({m.index, Grade::kA, m.value, 0.0});
    } else if (m.value <= t.threshold_high) {
      sum_b += m.value;
      ++nb;
      t.entries.push_back({m.index, Grade::kB, m.value, 0.0});
    } else {
      min_c = nc++ ? std::min(min_c, m.value) : m.value;
      t.entries.push_back({m.index, Grade::kC, m.value, 0.0});
    }
  }
  if (na == 0 || nb == 0 || nc == 0) {
    throw DegeneratePartitionError("grade_by_margin: empty grade (A=" + std::to_string(na) +
                                   " B=" + std::to_string(nb) + " C=" + std::to_string(nc) + ")");
  }
  t.budgets = {max_a, sum_b / static_cast<double>(nb), min_c};
  for (auto& e : t.entries) e.eps = t.budgets[static_cast<std::size_t>(e.grade)];
  sort_entries(t);
  return t;
}

GradeTable grade_by_zmax(std::span<const IndexedValue> zmax, double z1, double z2,
                         std::array<double, 3> budgets) {
  if (!(z1 < z2)) throw ContractError("grade_by_zmax: need Z1 < Z2");
  for (double b : budgets)
    if (!(b >= 0.0)) throw ContractError("grade_by_zmax: budgets must be >= 0");
  GradeTable t;
  t.mode = GradeTable::Mode::kZmax;
  t.threshold_low = z1;
  t.threshold_high = z2;
  t.budgets = budgets;
  for (const auto& z : zmax) {
    const Grade g = z.value <= z1 ? Grade::kA : (z.value <= z2 ? Grade::kB : Grade::kC);
    t.entries.push_back({z.index, g, z.value, budgets[static_cast<std::size_t>(g)]});
  }
  sort_entries(t);
  return t;
}

std::array<double, 3> StrategyParams::scaled_budgets(double base_epsilon) {
  return {base_epsilon * 5.0 / 8.0, base_epsilon * 10.0 / 8.0, base_epsilon * 15.0 / 8.0};
}

namespace {

BudgetAssignment grade_examples(const Network& net, const Tensor& x,
                                std::span<const std::size_t> labels, const StrategyParams& params) {
  const std::size_t n = labels.size();
  BudgetAssignment out;
  out.source = params.mode;
  out.eps.assign(n, 0.0);
  if (params.mode == BudgetMode::kUniform) {
    if (!(params.uniform_epsilon >= 0.0)) throw ContractError("uniform budget must be >= 0");
    out.eps.assign(n, params.uniform_epsilon);
    out.table.mode = GradeTable::Mode::kZmax;
    out.table.budgets = {params.uniform_epsilon, params.uniform_epsilon, params.uniform_epsilon};
    out.table.threshold_low = -std::numeric_limits<double>::infinity();
    out.table.threshold_high = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i)
      out.table.entries.push_back({i, Grade::kA, kNaN, params.uniform_epsilon});
    return out;
  }

  Tensor z;
  {
    grad::NoGradGuard no_grad;
    z = net.frozen_logits(x);
  }
  const auto pred = argmax_rows(z);
  for (auto y : labels)
    if (y >= net.class_count()) throw ContractError("assign_budgets: label out of range");

  std::vector<GradeEntry> misclassified;
  std::vector<std::size_t> correct;
  for (std::size_t i = 0; i < n; ++i) {
    if (pred[i] != labels[i]) {
      misclassified.push_back({i, Grade::kMisclassified, kNaN, 0.0});
    } else {
      correct.push_back(i);
    }
  }

  const bool by_margin = params.mode == BudgetMode::kMarginStatic ||
                         (params.mode == BudgetMode::kDynamic &&
                          params.grading == GradeTable::Mode::kMargin);
  if (correct.empty()) {
    out.table.mode = by_margin ? GradeTable::Mode::kMargin : GradeTable::Mode::kZmax;
    out.table.entries = std::move(misclassified);
    return out;
  }

  if (by_margin) {
    std::vector<IndexedValue> found;
    std::vector<std::size_t> not_found;
    const std::size_t d = x.cols();
    for (auto i : correct) {
      const auto row = x.data().subspan(i * d, d);
      MarginEstimate est;
      try {
        est = deepfool_margin(net, row, params.deepfool);
      } catch (const DegenerateGeometryError&) {
        est.found = false;
      }
      if (est.found) found.push_back({i, est.margin});
      else not_found.push_back(i);
    }
    out.table = grade_by_margin(found, params.fractions);
    for (auto i : not_found)
      out.table.entries.push_back({i, Grade::kC, kNaN, out.table.budgets[2]});
  } else {
    std::vector<IndexedValue> zmax;
    const std::size_t k = z.cols();
    for (auto i : correct) {
      const auto row = z.data().subspan(i * k, k);
      zmax.push_back({i, *std::max_element(row.begin(), row.end())});
    }
    out.table = grade_by_zmax(zmax, params.z1, params.z2, params.budgets);
  }
  for (auto& e : misclassified) out.table.entries.push_back(e);
  sort_entries(out.table);
  for (const auto& e : out.table.entries) out.eps[e.index] = e.eps;
  return out;
}

}  // namespace

BudgetAssignment assign_budgets(const Network& strategy, const Dataset& data,
                                const StrategyParams& params, std::string strategy_id) {
  if (data.size() == 0) throw DegeneratePartitionError("assign_budgets: empty dataset");
  BudgetAssignment out = grade_examples(strategy, data.examples, data.labels, params);
  out.strategy_id = std::move(strategy_id);
  return out;
}

std::vector<double> dynamic_regrade(const Network& current, const Tensor& x,
                                    std::span<const std::size_t> labels,
                                    const StrategyParams& params) {
  if (labels.size() != x.rows()) throw DimensionError("dynamic_regrade: one label per row");
  return grade_examples(current, x, labels, params).eps;
}

}  // namespace mmat
