#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mmat/attacks.hpp"
#include "mmat/data.hpp"
#include "mmat/nets.hpp"

namespace mmat {

// Exact correct/total count; value() only for display and comparisons.
struct Fraction {
  std::size_t correct = 0;
  std::size_t total = 0;
  double value() const noexcept {
    return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  }
  bool operator==(const Fraction&) const = default;
};

Fraction accuracy_on(const Network& net, const grad::Tensor& x, std::span<const std::size_t> labels);

Fraction natural_accuracy(const Network& net, const Dataset& data);

// Attacked copy of the whole dataset; row i uses example id i for its random start.
grad::Tensor adversarial_examples(const Network& net, const Dataset& data, const AttackSpec& spec);

Fraction robust_accuracy(const Network& net, const Dataset& data, const AttackSpec& spec);

// Adversarial examples computed on `source`, scored on `target`.
Fraction black_box_transfer(const Network& source, const Network& target, const Dataset& data,
                            const AttackSpec& spec);

enum class MarginSubset { kCorrect, kMisclassified, kAll };

const char* to_string(MarginSubset s) noexcept;
MarginSubset margin_subset_from_string(std::string_view name);

struct MarginHistogram {
  std::vector<double> edges;         // bins + 1 edges starting at 0
  std::vector<std::size_t> counts;   // found margins; the last bin absorbs overflow
  std::size_t not_found = 0;
  std::string model_id;
  MarginSubset subset = MarginSubset::kCorrect;
  std::vector<double> margins;       // found margins in example order

  std::size_t evaluated() const noexcept;
  double median() const;  // over found margins; NaN when none
  // "bin_lo,bin_hi,count" rows.
  std::string to_csv() const;
};

// DeepFool margins of the chosen subset. Misclassified examples sit on the wrong side of
// the boundary and are counted at margin 0 without running DeepFool.
MarginHistogram margin_histogram(const Network& net, const Dataset& data, std::size_t bins = 25,
                                 MarginSubset subset = MarginSubset::kCorrect,
                                 double bin_width = 1.0 / 255.0,
                                 const DeepFoolOptions& options = {});

struct EvalReport {
  std::string model_id;
  std::string dataset_id;
  Fraction natural;
  std::map<std::string, Fraction> robust;       // keyed by attack label
  std::map<std::string, AttackSpec> specs;
  std::map<std::string, Fraction> transfer;     // keyed by "<label>@<source>"
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;

  std::string to_json(const std::string& config_hash = "") const;
};

// Label such as "pgd20", "fgsm", "cw-pgd20".
std::string attack_label(const AttackSpec& spec);

EvalReport evaluate(const Network& net, const Dataset& data, std::span<const AttackSpec> attacks,
                    std::string model_id = "", std::uint64_t seed = 0);

}  // namespace mmat
