#include "mmat/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <sstream>

#include "mmat/errors.hpp"
#include "mmat/format.hpp"
#include "mmat/random.hpp"

namespace mmat {

using grad::Tensor;

void Dataset::validate() const {
  if (examples.rank() != 2) throw DimensionError("dataset: examples must be 2-D");
  if (examples.rows() != labels.size()) {
    throw DimensionError("dataset: " + std::to_string(examples.rows()) + " examples but " +
                         std::to_string(labels.size()) + " labels");
  }
  for (auto y : labels)
    if (y >= classes) throw ContractError("dataset: label " + std::to_string(y) + " >= K");
  if (box01()) {
    for (double v : examples.data())
      if (!(v >= 0.0 && v <= 1.0)) throw ContractError("dataset: box01 value outside [0,1]");
  }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out = *this;
  out.examples = examples.gather_rows(indices);
  out.labels.clear();
  for (auto i : indices) out.labels.push_back(labels.at(i));
  return out;
}

Dataset gen_gaussians(std::size_t n_per_class, std::span<const Point2> centers, double sigma,
                      std::uint64_t seed) {
  if (n_per_class == 0) throw DegeneratePartitionError("gen_gaussians: empty dataset");
  if (centers.size() < 2) throw ContractError("gen_gaussians: need at least two centers");
  if (!(sigma > 0.0)) throw ContractError("gen_gaussians: sigma must be positive");
  Dataset d;
  std::vector<double> xs;
  xs.reserve(2 * n_per_class * centers.size());
  for (std::size_t c = 0; c < centers.size(); ++c) {
    CounterRng rng(rng::derive(seed, "gaussians", {c}));
    for (std::size_t i = 0; i < n_per_class; ++i) {
      xs.push_back(centers[c].x + sigma * rng.normal());
      xs.push_back(centers[c].y + sigma * rng.normal());
      d.labels.push_back(c);
    }
  }
  d.examples = Tensor({d.labels.size(), 2}, std::move(xs));
  d.classes = centers.size();
  d.id = "gaussians";
  d.base_epsilon = sigma / 4.0;
  return d;
}

Dataset gen_rings(std::size_t n_per_class, std::span<const double> radii, double noise,
                  std::uint64_t seed) {
  const double one[] = {noise};
  return gen_rings(n_per_class, radii, std::span<const double>(one), seed);
}

Dataset gen_rings(std::size_t n_per_class, std::span<const double> radii,
                  std::span<const double> noise, std::uint64_t seed) {
  if (n_per_class == 0) throw DegeneratePartitionError("gen_rings: empty dataset");
  if (radii.size() < 2) throw ContractError("gen_rings: need at least two radii");
  if (noise.size() != 1 && noise.size() != radii.size()) {
    throw ContractError("gen_rings: need one noise level or one per ring");
  }
  for (double s : noise) {
    if (!(s >= 0.0)) throw ContractError("gen_rings: noise must be nonnegative");
  }
  auto noise_of = [&](std::size_t c) { return noise.size() == 1 ? noise[0] : noise[c]; };
  Dataset d;
  for (std::size_t a = 0; a < radii.size(); ++a) {
    for (std::size_t b = a + 1; b < radii.size(); ++b) {
      if (radii[a] == radii[b]) throw ContractError("gen_rings: radii must be distinct");
      if (std::abs(radii[a] - radii[b]) <= 3.0 * std::max(noise_of(a), noise_of(b))) {
        d.warnings.push_back("rings " + std::to_string(a) + " and " + std::to_string(b) +
                             " overlap within noise");
      }
    }
  }
  std::vector<double> xs;
  xs.reserve(2 * n_per_class * radii.size());
  for (std::size_t c = 0; c < radii.size(); ++c) {
    CounterRng rng(rng::derive(seed, "rings", {c}));
    for (std::size_t i = 0; i < n_per_class; ++i) {
      const double theta = 2.0 * std::numbers::pi * rng.uniform();
      const double r = noise_of(c) > 0.0 ? radii[c] + noise_of(c) * rng.normal() : radii[c];
      xs.push_back(r * std::cos(theta));
      xs.push_back(r * std::sin(theta));
      d.labels.push_back(c);
    }
  }
  d.examples = Tensor({d.labels.size(), 2}, std::move(xs));
  d.classes = radii.size();
  d.id = "rings";
  d.base_epsilon = 0.1;
  return d;
}

// ---- IDX ---------------------------------------------------------------------

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
         (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

}  // namespace

IdxArray parse_idx(std::span<const std::uint8_t> buffer) {
  if (buffer.size() < 4) {
    throw FormatError("idx: truncated header, expected 4 magic bytes, got " +
                      std::to_string(buffer.size()), buffer.size());
  }
  if (buffer[0] != 0 || buffer[1] != 0) throw FormatError("idx: bad magic", 0);
  if (buffer[2] != 0x08) throw FormatError("idx: unsupported element type (only unsigned byte)", 2);
  const std::size_t ndims = buffer[3];
  const std::uint32_t magic = read_be32(buffer, 0);
  if (magic != kIdxLabelMagic && magic != kIdxImageMagic) {
    throw FormatError("idx: bad magic 0x" + format_hex(magic, 8), 3);
  }
  const std::size_t header = 4 + 4 * ndims;
  if (buffer.size() < header) {
    throw FormatError("idx: truncated dimension table, expected " + std::to_string(header) +
                      " bytes, got " + std::to_string(buffer.size()), buffer.size());
  }
  IdxArray out;
  std::size_t payload = 1;
  for (std::size_t i = 0; i < ndims; ++i) {
    out.dims.push_back(read_be32(buffer, 4 + 4 * i));
    payload *= out.dims.back();
  }
  const std::size_t expected = header + payload;
  if (buffer.size() < expected) {
    throw FormatError("idx: truncated payload, expected " + std::to_string(expected) +
                      " bytes, got " + std::to_string(buffer.size()), buffer.size());
  }
  if (buffer.size() > expected) {
    throw FormatError("idx: trailing bytes, expected " + std::to_string(expected) + " bytes, got " +
                      std::to_string(buffer.size()), expected);
  }
  out.bytes.assign(buffer.begin() + static_cast<std::ptrdiff_t>(header), buffer.end());
  return out;
}

IdxArray read_idx(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("idx: cannot open " + path.string());
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_idx(buf);
}

std::vector<std::uint8_t> encode_idx(const IdxArray& array) {
  if (array.dims.empty() || array.dims.size() > 255) throw ContractError("idx: bad rank");
  std::size_t payload = 1;
  for (auto d : array.dims) payload *= d;
  if (payload != array.bytes.size()) throw DimensionError("idx: payload does not match dims");
  std::vector<std::uint8_t> out;
  put_be32(out, 0x00000800u | static_cast<std::uint32_t>(array.dims.size()));
  for (auto d : array.dims) put_be32(out, d);
  out.insert(out.end(), array.bytes.begin(), array.bytes.end());
  return out;
}

void write_idx(const std::filesystem::path& path, const IdxArray& array) {
  const auto bytes = encode_idx(array);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("idx: cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Tensor idx_images_to_tensor(const IdxArray& images) {
  if (images.dims.empty()) throw FormatError("idx: image file has no dimensions", 3);
  const std::size_t n = images.dims[0];
  const std::size_t d = n ? images.bytes.size() / n : 0;
  std::vector<double> values(images.bytes.size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = images.bytes[i] / 255.0;
  return Tensor({n, d}, std::move(values));
}

Dataset load_idx_dataset(const std::filesystem::path& images, const std::filesystem::path& labels,
                         std::string id) {
  const IdxArray img = read_idx(images);
  const IdxArray lab = read_idx(labels);
  if (lab.dims.size() != 1) throw FormatError("idx: label file must be 1-D", 3);
  if (img.dims.empty() || img.dims[0] != lab.dims[0]) {
    throw DimensionError("idx: image and label counts differ");
  }
  Dataset d;
  d.examples = idx_images_to_tensor(img);
  std::size_t k = 0;
  for (auto b : lab.bytes) {
    d.labels.push_back(b);
    k = std::max<std::size_t>(k, b + 1);
  }
  d.classes = std::max<std::size_t>(k, 2);
  d.domain = Domain::kBox01;
  d.id = std::move(id);
  d.base_epsilon = 8.0 / 255.0;
  return d;
}

std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t m, std::uint64_t seed,
                                              int epoch) {
  if (m == 0) throw ContractError("batches: batch size must be >= 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  CounterRng rng(rng::derive(seed, "shuffle", {static_cast<std::uint64_t>(epoch)}));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += m) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + m)));
  }
  return out;
}

std::string dataset_to_csv(const Dataset& data) {
  std::ostringstream os;
  const std::size_t d = data.dim();
  for (std::size_t j = 0; j < d; ++j) os << 'x' << j << ',';
  os << "label\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) os << format_double(data.examples.at(i, j)) << ',';
    os << data.labels[i] << '\n';
  }
  return os.str();
}

}  // namespace mmat
