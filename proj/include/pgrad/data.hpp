#pragma once

#include <array>
#include <cstdint>
#include <cstddef>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "pgrad/errors.hpp"
#include "pgrad/rng.hpp"

namespace pgrad {

struct Example {
  std::vector<double> features;
  std::size_t label = 0;
};

struct Dataset {
  std::vector<Example> examples;
  std::size_t n_classes = 0;
  std::size_t feature_dim = 0;

  std::size_t size() const { return examples.size(); }
};

/// Label rule of the threshold toy distribution: class 1 exactly on [0,alpha].
inline bool toy_label_is_one(double x, double alpha) { return x >= 0.0 && x <= alpha; }

/// m examples with x ~ Uniform[-1,1]; class 1 iff x in [0,alpha], else class 0.
inline Dataset gen_toy(std::size_t m, double alpha, Rng& rng) {
  if (!(alpha > 0.5 && alpha < 1.0)) throw InvalidConfigError("gen_toy: alpha must be in (0.5,1)");
  if (m == 0) throw InvalidInputError("gen_toy: m must be positive");
  Dataset ds;
  ds.n_classes = 2;
  ds.feature_dim = 1;
  ds.examples.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double x = rng.uniform(-1.0, 1.0);
    ds.examples[i].features = {x};
    ds.examples[i].label = toy_label_is_one(x, alpha) ? 1 : 0;
  }
  return ds;
}

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InvalidInputError("cannot open file: " + path);
  f.seekg(0, std::ios::end);
  const std::streamoff n = f.tellg();
  f.seekg(0, std::ios::beg);
  std::vector<unsigned char> buf(static_cast<std::size_t>(n));
  f.read(reinterpret_cast<char*>(buf.data()), n);
  if (!f) throw FormatError("failed reading file: " + path);
  return buf;
}

inline std::uint32_t read_u32_be(const unsigned char* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
         std::uint32_t(p[3]);
}

}  // namespace detail

/// Parses the big-endian IDX pair used to distribute MNIST. Image file magic
/// must be 0x00000803 with dims (count, 28, 28); label file magic 0x00000801.
/// Features are the raw byte values in [0,255]; scale with scale_features.
inline Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = detail::read_file_bytes(images_path);
  const auto lab = detail::read_file_bytes(labels_path);

  if (img.size() < 16) throw FormatError("idx image file truncated header: " + images_path);
  if (lab.size() < 8) throw FormatError("idx label file truncated header: " + labels_path);

  const std::uint32_t img_magic = detail::read_u32_be(img.data());
  if (img_magic != 0x00000803u) {
    throw FormatError("idx image file bad magic (expected 0x00000803): " + images_path);
  }
  const std::uint32_t lab_magic = detail::read_u32_be(lab.data());
  if (lab_magic != 0x00000801u) {
    throw FormatError("idx label file bad magic (expected 0x00000801): " + labels_path);
  }

  const std::uint32_t n_images = detail::read_u32_be(img.data() + 4);
  const std::uint32_t rows = detail::read_u32_be(img.data() + 8);
  const std::uint32_t cols = detail::read_u32_be(img.data() + 12);
  if (rows != 28) throw FormatError("idx image file rows != 28: " + images_path);
  if (cols != 28) throw FormatError("idx image file cols != 28: " + images_path);

  const std::uint32_t n_labels = detail::read_u32_be(lab.data() + 4);
  if (n_images != n_labels) {
    throw FormatError("idx count mismatch: " + std::to_string(n_images) + " images vs " +
                      std::to_string(n_labels) + " labels");
  }

  const std::size_t dim = 28 * 28;
  if (img.size() != 16 + std::size_t(n_images) * dim) {
    throw FormatError("idx image file data size does not match count: " + images_path);
  }
  if (lab.size() != 8 + std::size_t(n_labels)) {
    throw FormatError("idx label file data size does not match count: " + labels_path);
  }

  Dataset ds;
  ds.n_classes = 10;
  ds.feature_dim = dim;
  ds.examples.resize(n_images);
  for (std::size_t i = 0; i < n_images; ++i) {
    const unsigned char label = lab[8 + i];
    if (label >= 10) {
      throw FormatError("idx label value out of range at index " + std::to_string(i));
    }
    Example& e = ds.examples[i];
    e.label = label;
    e.features.resize(dim);
    const unsigned char* px = img.data() + 16 + i * dim;
    for (std::size_t j = 0; j < dim; ++j) e.features[j] = static_cast<double>(px[j]);
  }
  return ds;
}

/// CIFAR-10 binary batches: records of 1 label byte + 3072 pixel bytes.
/// Accepts any number of batch files; each must frame an exact record count.
inline Dataset load_cifar10(const std::vector<std::string>& batch_paths) {
  constexpr std::size_t kRecord = 1 + 3072;
  if (batch_paths.empty()) throw InvalidInputError("load_cifar10: no batch files given");
  Dataset ds;
  ds.n_classes = 10;
  ds.feature_dim = 3072;
  for (const auto& path : batch_paths) {
    const auto buf = detail::read_file_bytes(path);
    if (buf.empty() || buf.size() % kRecord != 0) {
      throw FormatError("cifar10 batch size is not a multiple of 3073 bytes: " + path);
    }
    const std::size_t n = buf.size() / kRecord;
    ds.examples.reserve(ds.examples.size() + n);
    for (std::size_t i = 0; i < n; ++i) {
      const unsigned char* rec = buf.data() + i * kRecord;
      if (rec[0] >= 10) {
        throw FormatError("cifar10 label value out of range in " + path + " at record " + std::to_string(i));
      }
      Example e;
      e.label = rec[0];
      e.features.resize(3072);
      for (std::size_t j = 0; j < 3072; ++j) e.features[j] = static_cast<double>(rec[1 + j]);
      ds.examples.push_back(std::move(e));
    }
  }
  return ds;
}

/// Affine map of every feature from [source_min, source_max] onto [-1,1].
inline Dataset scale_features(Dataset ds, double source_min, double source_max) {
  if (!(source_min < source_max)) throw InvalidConfigError("scale_features: need source_min < source_max");
  const double range = source_max - source_min;
  for (Example& e : ds.examples) {
    for (double& v : e.features) v = -1.0 + 2.0 * (v - source_min) / range;
  }
  return ds;
}

/// Five disjoint index lists covering the dataset, sizes differing by at most 1.
struct FoldSplit {
  std::array<std::vector<std::size_t>, 5> folds;
};

inline FoldSplit split_folds(const Dataset& ds, Rng& rng) {
  const std::size_t n = ds.size();
  if (n < 5) throw InvalidInputError("split_folds: dataset must have at least 5 examples");
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  rng.shuffle(perm);
  FoldSplit split;
  const std::size_t base = n / 5, rem = n % 5;
  std::size_t pos = 0;
  for (std::size_t f = 0; f < 5; ++f) {
    const std::size_t len = base + (f < rem ? 1 : 0);
    split.folds[f].assign(perm.begin() + pos, perm.begin() + pos + len);
    pos += len;
  }
  return split;
}

struct FoldRoles {
  std::vector<std::size_t> train, early_stop, validation;
};

/// Cyclic role assignment: round t trains on folds t,t+1,t+2 (mod 5), uses
/// fold t+3 for early stopping and fold t+4 for validation.
inline FoldRoles rotate_roles(const FoldSplit& split, std::size_t t) {
  FoldRoles roles;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& f = split.folds[(t + i) % 5];
    roles.train.insert(roles.train.end(), f.begin(), f.end());
  }
  roles.early_stop = split.folds[(t + 3) % 5];
  roles.validation = split.folds[(t + 4) % 5];
  return roles;
}

inline Dataset subset(const Dataset& ds, std::span<const std::size_t> idx) {
  Dataset out;
  out.n_classes = ds.n_classes;
  out.feature_dim = ds.feature_dim;
  out.examples.reserve(idx.size());
  for (std::size_t i : idx) out.examples.push_back(ds.examples[i]);
  return out;
}

}  // namespace pgrad
