#include "mmat/nets.hpp"

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "mmat/errors.hpp"
#include "mmat/random.hpp"

namespace mmat {

using grad::Tensor;
using json = nlohmann::json;

Network::Network(std::vector<DenseLayer> layers, std::uint64_t seed)
    : layers_(std::move(layers)), seed_(seed) {
  if (layers_.empty()) throw ContractError("network: no layers");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.weight.rank() != 2 || l.bias.size() != l.weight.cols()) {
      throw DimensionError("network: layer " + std::to_string(i) + " weight " +
                           grad::shape_string(l.weight.shape()) + " and bias " +
                           grad::shape_string(l.bias.shape()) + " disagree");
    }
    if (i > 0 && layers_[i - 1].weight.cols() != l.weight.rows()) {
      throw DimensionError("network: layer " + std::to_string(i) + " does not chain");
    }
  }
  if (layers_.back().activation != Activation::kIdentity) {
    throw ContractError("network: last layer must be identity (logits)");
  }
  if (class_count() < 2) throw ContractError("network: need at least two classes");
}

Network Network::mlp(std::span<const std::size_t> sizes, std::uint64_t seed) {
  if (sizes.size() < 2) throw ContractError("mlp: need at least two layer sizes");
  for (auto s : sizes)
    if (s == 0) throw ContractError("mlp: layer sizes must be positive");
  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    const std::size_t fan_in = sizes[i], fan_out = sizes[i + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    CounterRng rng(rng::derive(seed, "init", {i}));
    std::vector<double> w(fan_in * fan_out);
    for (double& v : w) v = rng.uniform(-limit, limit);
    DenseLayer layer{Tensor({fan_in, fan_out}, std::move(w)), Tensor::zeros({fan_out}),
                     i + 2 == sizes.size() ? Activation::kIdentity : Activation::kRelu};
    layer.weight.set_requires_grad(true);
    layer.bias.set_requires_grad(true);
    layers.push_back(std::move(layer));
  }
  return Network(std::move(layers), seed);
}

std::size_t Network::input_dim() const {
  if (layers_.empty()) throw ContractError("network: empty");
  return layers_.front().weight.rows();
}

std::size_t Network::class_count() const {
  if (layers_.empty()) throw ContractError("network: empty");
  return layers_.back().weight.cols();
}

std::vector<Tensor> Network::parameters() const {
  std::vector<Tensor> out;
  out.reserve(layers_.size() * 2);
  for (const auto& l : layers_) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

void Network::zero_grad() {
  for (auto& l : layers_) {
    l.weight.zero_grad();
    l.bias.zero_grad();
  }
}

Tensor Network::forward(const Tensor& x, bool detach_params) const {
  if (x.rank() != 2 || x.cols() != input_dim()) {
    throw DimensionError("logits: input " + grad::shape_string(x.shape()) +
                         " does not match input_dim " + std::to_string(input_dim()));
  }
  Tensor h = x;
  for (const auto& l : layers_) {
    const Tensor w = detach_params ? l.weight.detach() : l.weight;
    const Tensor b = detach_params ? l.bias.detach() : l.bias;
    h = grad::add_rowvec(grad::matmul(h, w), b);
    if (l.activation == Activation::kRelu) h = grad::relu(h);
  }
  return h;
}

Tensor Network::logits(const Tensor& x) const { return forward(x, false); }
Tensor Network::frozen_logits(const Tensor& x) const { return forward(x, true); }

Network Network::clone() const {
  std::vector<DenseLayer> copy;
  copy.reserve(layers_.size());
  for (const auto& l : layers_) {
    DenseLayer c{l.weight.clone(), l.bias.clone(), l.activation};
    c.weight.set_requires_grad(true);
    c.bias.set_requires_grad(true);
    copy.push_back(std::move(c));
  }
  return Network(std::move(copy), seed_);
}

bool Network::same_parameters(const Network& other) const {
  if (layers_.size() != other.layers_.size()) return false;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& a = layers_[i];
    const auto& b = other.layers_[i];
    if (a.activation != b.activation || a.weight.shape() != b.weight.shape() ||
        a.bias.shape() != b.bias.shape())
      return false;
    if (!std::equal(a.weight.data().begin(), a.weight.data().end(), b.weight.data().begin()))
      return false;
    if (!std::equal(a.bias.data().begin(), a.bias.data().end(), b.bias.data().begin()))
      return false;
  }
  return true;
}

Tensor probs(const Tensor& logits) { return grad::softmax_rows(logits); }

std::vector<std::size_t> argmax_rows(const Tensor& t) {
  const std::size_t m = t.rows(), k = t.cols();
  std::vector<std::size_t> out(m, 0);
  const auto d = t.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 1; j < k; ++j)
      if (d[i * k + j] > d[i * k + out[i]]) out[i] = j;
  }
  return out;
}

std::vector<std::size_t> predict(const Network& net, const Tensor& x) {
  grad::NoGradGuard no_grad;
  return argmax_rows(net.logits(x));
}

Tensor input_gradient(const Network& net, const Tensor& x, std::span<const std::size_t> labels,
                      LossKind loss) {
  Tensor probe = x.detach();
  probe.set_requires_grad(true);
  Tensor value = loss_from_logits(loss, net.frozen_logits(probe), labels);
  value.backward();
  return probe.grad_tensor();
}

// ---- checkpoints -------------------------------------------------------------

namespace {

json layer_to_json(const DenseLayer& l) {
  const std::size_t r = l.weight.rows(), c = l.weight.cols();
  json w = json::array();
  for (std::size_t i = 0; i < r; ++i) {
    json row = json::array();
    for (std::size_t j = 0; j < c; ++j) row.push_back(l.weight.at(i, j));
    w.push_back(std::move(row));
  }
  json b = json::array();
  for (double v : l.bias.data()) b.push_back(v);
  return {{"w", std::move(w)}, {"b", std::move(b)},
          {"act", l.activation == Activation::kRelu ? "relu" : "id"}};
}

}  // namespace

std::string checkpoint_to_json(const Checkpoint& ckpt) {
  json doc;
  doc["meta"] = {{"method", ckpt.method},
                 {"epoch", ckpt.epoch},
                 {"config_hash", ckpt.config_hash},
                 {"seed", ckpt.seed},
                 {"init_seed", ckpt.network.seed()},
                 {"version", kArtifactVersion}};
  json layers = json::array();
  for (const auto& l : ckpt.network.layers()) layers.push_back(layer_to_json(l));
  doc["layers"] = std::move(layers);
  return doc.dump(1) + "\n";
}

Checkpoint checkpoint_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("checkpoint: ") + e.what(), e.byte);
  }
  try {
    Checkpoint ckpt;
    const auto& meta = doc.at("meta");
    ckpt.method = meta.value("method", "natural");
    ckpt.epoch = meta.value("epoch", 0);
    ckpt.config_hash = meta.value("config_hash", "");
    ckpt.seed = meta.value("seed", std::uint64_t{0});
    std::vector<DenseLayer> layers;
    for (const auto& lj : doc.at("layers")) {
      const auto& w = lj.at("w");
      const std::size_t r = w.size();
      const std::size_t c = r ? w.at(0).size() : 0;
      std::vector<double> wv;
      wv.reserve(r * c);
      for (const auto& row : w) {
        if (row.size() != c) throw DimensionError("checkpoint: ragged weight matrix");
        for (const auto& v : row) wv.push_back(v.get<double>());
      }
      std::vector<double> bv = lj.at("b").get<std::vector<double>>();
      const std::string act = lj.at("act").get<std::string>();
      if (act != "relu" && act != "id") throw FormatError("checkpoint: unknown activation " + act, 0);
      DenseLayer layer{Tensor({r, c}, std::move(wv)), Tensor::vector(std::move(bv)),
                       act == "relu" ? Activation::kRelu : Activation::kIdentity};
      layer.weight.set_requires_grad(true);
      layer.bias.set_requires_grad(true);
      layers.push_back(std::move(layer));
    }
    ckpt.network = Network(std::move(layers), meta.value("init_seed", std::uint64_t{0}));
    return ckpt;
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: ") + e.what(), 0);
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << checkpoint_to_json(ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str());
}

}  // namespace mmat
