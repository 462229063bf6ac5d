#include "mmat/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>
#include <sstream>

#include "mmat/errors.hpp"
#include "mmat/format.hpp"

namespace mmat {

using grad::Tensor;

Fraction accuracy_on(const Network& net, const Tensor& x, std::span<const std::size_t> labels) {
  if (labels.empty()) throw DegeneratePartitionError("accuracy: empty dataset");
  const auto pred = predict(net, x);
  Fraction f{0, labels.size()};
  for (std::size_t i = 0; i < labels.size(); ++i) f.correct += pred[i] == labels[i];
  return f;
}

Fraction natural_accuracy(const Network& net, const Dataset& data) {
  return accuracy_on(net, data.examples, data.labels);
}

Tensor adversarial_examples(const Network& net, const Dataset& data, const AttackSpec& spec) {
  if (data.size() == 0) throw DegeneratePartitionError("attack: empty dataset");
  return run_attack(net, data.examples, data.labels, spec);
}

Fraction robust_accuracy(const Network& net, const Dataset& data, const AttackSpec& spec) {
  return accuracy_on(net, adversarial_examples(net, data, spec), data.labels);
}

Fraction black_box_transfer(const Network& source, const Network& target, const Dataset& data,
                            const AttackSpec& spec) {
  if (source.input_dim() != target.input_dim() || source.class_count() != target.class_count()) {
    throw DimensionError("transfer: source and target dimensions differ");
  }
  return accuracy_on(target, adversarial_examples(source, data, spec), data.labels);
}

const char* to_string(MarginSubset s) noexcept {
  switch (s) {
    case MarginSubset::kCorrect: return "correct";
    case MarginSubset::kMisclassified: return "misclassified";
    case MarginSubset::kAll: return "all";
  }
  return "?";
}

MarginSubset margin_subset_from_string(std::string_view name) {
  if (name == "correct") return MarginSubset::kCorrect;
  if (name == "misclassified") return MarginSubset::kMisclassified;
  if (name == "all") return MarginSubset::kAll;
  throw ContractError("unknown margin subset '" + std::string(name) + "'");
}

std::size_t MarginHistogram::evaluated() const noexcept {
  std::size_t n = not_found;
  for (auto c : counts) n += c;
  return n;
}

double MarginHistogram::median() const {
  if (margins.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> s = margins;
  std::sort(s.begin(), s.end());
  const std::size_t n = s.size();
  return n % 2 ? s[n / 2] : 0.5 * (s[n / 2 - 1] + s[n / 2]);
}

std::string MarginHistogram::to_csv() const {
  std::ostringstream os;
  os << "bin_lo,bin_hi,count\n";
  for (std::size_t b = 0; b < counts.size(); ++b) {
    os << format_double(edges[b]) << ',' << format_double(edges[b + 1]) << ',' << counts[b] << '\n';
  }
  return os.str();
}

MarginHistogram margin_histogram(const Network& net, const Dataset& data, std::size_t bins,
                                 MarginSubset subset, double bin_width,
                                 const DeepFoolOptions& options) {
  if (bins < 1) throw ContractError("margin_histogram: bins must be >= 1");
  if (!(bin_width > 0.0)) throw ContractError("margin_histogram: bin width must be > 0");
  MarginHistogram h;
  h.subset = subset;
  h.counts.assign(bins, 0);
  for (std::size_t b = 0; b <= bins; ++b) h.edges.push_back(bin_width * static_cast<double>(b));
  auto bin_of = [&](double m) {
    const auto b = static_cast<std::size_t>(std::floor(m / bin_width));
    return std::min(b, bins - 1);
  };

  const auto pred = predict(net, data.examples);
  const std::size_t d = data.dim();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const bool correct = pred[i] == data.labels[i];
    if (correct && subset == MarginSubset::kMisclassified) continue;
    if (!correct && subset == MarginSubset::kCorrect) continue;
    if (!correct) {
      ++h.counts[0];
      h.margins.push_back(0.0);
      continue;
    }
    MarginEstimate est;
    try {
      est = deepfool_margin(net, data.examples.data().subspan(i * d, d), options);
    } catch (const DegenerateGeometryError&) {
      est.found = false;
    }
    if (!est.found) {
      ++h.not_found;
      continue;
    }
    ++h.counts[bin_of(est.margin)];
    h.margins.push_back(est.margin);
  }
  return h;
}

std::string attack_label(const AttackSpec& spec) {
  switch (spec.family) {
    case AttackFamily::kFgsm: return "fgsm";
    case AttackFamily::kPgd: return "pgd" + std::to_string(spec.iterations);
    case AttackFamily::kCwPgd: return "cw-pgd" + std::to_string(spec.iterations);
  }
  return "attack";
}

EvalReport evaluate(const Network& net, const Dataset& data, std::span<const AttackSpec> attacks,
                    std::string model_id, std::uint64_t seed) {
  EvalReport r;
  r.model_id = std::move(model_id);
  r.dataset_id = data.id;
  r.seed = seed;
  r.natural = natural_accuracy(net, data);
  for (const auto& spec : attacks) {
    const auto label = attack_label(spec);
    r.robust[label] = robust_accuracy(net, data, spec);
    r.specs[label] = spec;
  }
  const auto pgd = std::find_if(attacks.begin(), attacks.end(), [](const AttackSpec& s) {
    return s.family == AttackFamily::kPgd;
  });
  const auto fg = std::find_if(attacks.begin(), attacks.end(), [](const AttackSpec& s) {
    return s.family == AttackFamily::kFgsm;
  });
  if (pgd != attacks.end() && fg != attacks.end() && pgd->epsilon == fg->epsilon &&
      r.robust[attack_label(*pgd)].value() > r.robust["fgsm"].value()) {
    r.warnings.push_back("RA under PGD exceeds RA under FGSM at the same epsilon");
  }
  return r;
}

namespace {

nlohmann::json fraction_json(const Fraction& f) {
  return {{"correct", f.correct}, {"total", f.total}, {"value", f.value()}};
}

}  // namespace

std::string EvalReport::to_json(const std::string& config_hash) const {
  nlohmann::json doc;
  doc["model_id"] = model_id;
  doc["dataset_id"] = dataset_id;
  doc["natural_accuracy"] = fraction_json(natural);
  nlohmann::json ra = nlohmann::json::object();
  for (const auto& [label, f] : robust) ra[label] = fraction_json(f);
  doc["robust_accuracy"] = std::move(ra);
  nlohmann::json specs_json = nlohmann::json::object();
  for (const auto& [label, s] : specs) {
    specs_json[label] = {{"family", to_string(s.family)}, {"epsilon", s.epsilon},
                         {"step", s.step}, {"iterations", s.iterations},
                         {"random_start", s.random_start}, {"loss", to_string(s.loss)},
                         {"seed", s.seed}, {"box01", s.box01}};
  }
  doc["attacks"] = std::move(specs_json);
  if (!transfer.empty()) {
    nlohmann::json tr = nlohmann::json::object();
    for (const auto& [label, f] : transfer) tr[label] = fraction_json(f);
    doc["transfer"] = std::move(tr);
  }
  doc["warnings"] = warnings;
  doc["seed"] = seed;
  doc["config_hash"] = config_hash;
  doc["version"] = kArtifactVersion;
  return doc.dump(1) + "\n";
}

}  // namespace mmat
