#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mmat/tensor.hpp"

namespace mmat {

enum class Domain { kBox01, kUnconstrained };

struct Dataset {
  grad::Tensor examples;             // [N × d], no history
  std::vector<std::size_t> labels;   // N entries, each < classes
  std::size_t classes = 2;
  Domain domain = Domain::kUnconstrained;
  std::string id;
  double base_epsilon = 0.0;         // reference L∞ budget for this dataset
  std::vector<std::string> warnings;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const { return examples.cols(); }
  bool box01() const noexcept { return domain == Domain::kBox01; }

  // Throws if the invariants (N = labels, labels < K, box range) do not hold.
  void validate() const;
  Dataset subset(std::span<const std::size_t> indices) const;
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

// Isotropic normal clusters, one per center, n_per_class points each. base ε = σ/4.
Dataset gen_gaussians(std::size_t n_per_class, std::span<const Point2> centers, double sigma,
                      std::uint64_t seed);

// Concentric rings, one class per radius; radial noise is normal with std `noise`.
// Flags a warning when neighbouring radii are within 3·noise of each other.
Dataset gen_rings(std::size_t n_per_class, std::span<const double> radii, double noise,
                  std::uint64_t seed);
// Per-ring noise levels (one entry per radius, or a single shared one).
Dataset gen_rings(std::size_t n_per_class, std::span<const double> radii,
                  std::span<const double> noise, std::uint64_t seed);

// ---- IDX ---------------------------------------------------------------------

inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;

struct IdxArray {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> bytes;  // raw payload
};

IdxArray parse_idx(std::span<const std::uint8_t> buffer);
IdxArray read_idx(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_idx(const IdxArray& array);
void write_idx(const std::filesystem::path& path, const IdxArray& array);

// Images scaled by 1/255 into a [N × prod(dims[1:])] tensor.
grad::Tensor idx_images_to_tensor(const IdxArray& images);

// Pairs an image file with a label file. Domain box01, base ε = 8/255.
Dataset load_idx_dataset(const std::filesystem::path& images, const std::filesystem::path& labels,
                         std::string id = "idx");

// ---- batching ----------------------------------------------------------------

// Seeded permutation of [0, N) per (seed, epoch), cut into chunks of m (last may be short).
std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t m, std::uint64_t seed,
                                              int epoch);

// x0,x1,...,label with a header row.
std::string dataset_to_csv(const Dataset& data);

}  // namespace mmat
