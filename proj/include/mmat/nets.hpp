#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mmat/losses.hpp"
#include "mmat/tensor.hpp"

namespace mmat {

enum class Activation { kRelu, kIdentity };

struct DenseLayer {
  grad::Tensor weight;  // [fan_in × fan_out]
  grad::Tensor bias;    // [fan_out]
  Activation activation = Activation::kRelu;
};

// Multilayer perceptron mapping [batch × input_dim] to logits [batch × K].
class Network {
 public:
  Network() = default;
  // Validates that dimensions chain, the last layer is identity and K >= 2.
  explicit Network(std::vector<DenseLayer> layers, std::uint64_t seed = 0);

  // Glorot-uniform weights from a counter-based stream keyed on `seed`, zero biases.
  // Hidden layers use ReLU; the last layer is identity.
  static Network mlp(std::span<const std::size_t> sizes, std::uint64_t seed);

  std::size_t input_dim() const;
  std::size_t class_count() const;
  std::uint64_t seed() const noexcept { return seed_; }
  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  std::vector<DenseLayer>& layers() noexcept { return layers_; }

  // Handles sharing storage with the network's weights and biases, in layer order.
  std::vector<grad::Tensor> parameters() const;
  void zero_grad();

  // Forward pass recording history on the parameters (when they track gradients).
  grad::Tensor logits(const grad::Tensor& x) const;
  // Forward pass through detached parameters: gradients can only reach `x`.
  grad::Tensor frozen_logits(const grad::Tensor& x) const;

  // Deep copy with fresh, gradient-tracking parameters.
  Network clone() const;

  // True when every parameter value is bit-identical.
  bool same_parameters(const Network& other) const;

 private:
  grad::Tensor forward(const grad::Tensor& x, bool detach_params) const;

  std::vector<DenseLayer> layers_;
  std::uint64_t seed_ = 0;
};

grad::Tensor probs(const grad::Tensor& logits);

// Row-wise argmax, ties to the lowest index.
std::vector<std::size_t> argmax_rows(const grad::Tensor& t);

std::vector<std::size_t> predict(const Network& net, const grad::Tensor& x);

// d(mean batch loss)/dx without touching parameter values or gradients.
grad::Tensor input_gradient(const Network& net, const grad::Tensor& x,
                            std::span<const std::size_t> labels, LossKind loss);

// ---- checkpoints -------------------------------------------------------------

struct Checkpoint {
  Network network;
  std::string method = "natural";  // natural | sat-<eps> | mmat
  int epoch = 0;
  std::string config_hash;
  std::uint64_t seed = 0;
};

inline constexpr const char* kArtifactVersion = "mmat-0.1.0";

std::string checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const std::string& text);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mmat
