#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "purl/dataset.hpp"
#include "purl/errors.hpp"
#include "purl/matrix.hpp"

namespace purl {

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

enum class Generator { gaussian_blobs, spirals };

struct SyntheticSpec {
  Generator generator = Generator::gaussian_blobs;
  std::size_t classes = 3;
  std::size_t features = 16;
  std::size_t train = 4096;
  std::size_t test = 1024;
  double noise = 1.5;
  std::uint64_t seed = 0;

  void validate() const {
    if (classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
    if (features == 0 || train == 0 || test == 0) throw ConfigError("synthetic sizes must be positive");
    if (generator == Generator::spirals && features < 2) throw ConfigError("spirals need >= 2 features");
    if (!(noise >= 0.0)) throw ConfigError("noise must be nonnegative");
  }
};

struct TrainTest {
  Dataset train;
  Dataset test;
};

namespace detail {

// Balanced labels in shuffled order.
inline std::vector<std::size_t> balanced_labels(std::size_t n, std::size_t classes, std::mt19937_64& rng) {
  std::vector<std::size_t> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = i % classes;
  std::shuffle(y.begin(), y.end(), rng);
  return y;
}

inline Dataset sample_blobs(const Matrix& means, std::size_t n, double noise, std::mt19937_64& rng) {
  Dataset d;
  d.classes = means.rows();
  d.labels = balanced_labels(n, d.classes, rng);
  d.inputs = Matrix(n, means.cols());
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < means.cols(); ++c) {
      d.inputs(r, c) = means(d.labels[r], c) + noise * gauss(rng);
    }
  }
  return d;
}

// Interleaved spiral arms in the first two features; remaining features are
// pure noise.
inline Dataset sample_spirals(std::size_t classes, std::size_t features, std::size_t n, double noise,
                              std::mt19937_64& rng) {
  Dataset d;
  d.classes = classes;
  d.labels = balanced_labels(n, classes, rng);
  d.inputs = Matrix(n, features);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t r = 0; r < n; ++r) {
    const double t = unit(rng);
    const double angle = 4.0 * t + 2.0 * std::numbers::pi * static_cast<double>(d.labels[r]) /
                                       static_cast<double>(classes);
    d.inputs(r, 0) = t * std::cos(angle) + noise * 0.1 * gauss(rng);
    d.inputs(r, 1) = t * std::sin(angle) + noise * 0.1 * gauss(rng);
    for (std::size_t c = 2; c < features; ++c) d.inputs(r, c) = noise * 0.1 * gauss(rng);
  }
  return d;
}

}  // namespace detail

inline TrainTest generate(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  TrainTest out;
  if (spec.generator == Generator::gaussian_blobs) {
    Matrix means(spec.classes, spec.features);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (double& v : means.values()) v = gauss(rng);
    out.train = detail::sample_blobs(means, spec.train, spec.noise, rng);
    out.test = detail::sample_blobs(means, spec.test, spec.noise, rng);
  } else {
    out.train = detail::sample_spirals(spec.classes, spec.features, spec.train, spec.noise, rng);
    out.test = detail::sample_spirals(spec.classes, spec.features, spec.test, spec.noise, rng);
  }
  return out;
}

// ---------------------------------------------------------------------------
// IDX files (big-endian). Supported element types: 0x08 unsigned byte and
// 0x0E 64-bit float. Byte images are scaled to [0, 1].
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
inline constexpr std::uint8_t kIdxUByte = 0x08;
inline constexpr std::uint8_t kIdxDouble = 0x0E;

struct IdxArray {
  std::uint8_t type = 0;
  std::vector<std::uint32_t> dims;
  std::vector<double> values;
};

namespace detail {

inline std::uint32_t read_be32(const unsigned char* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) |
         std::uint32_t{p[3]};
}

inline void write_be32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                              static_cast<char>(v >> 8), static_cast<char>(v)};
  os.write(b.data(), 4);
}

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace detail

inline IdxArray parse_idx(std::span<const unsigned char> bytes, std::size_t expected_rank = 0) {
  if (bytes.size() < 4) throw FormatError("IDX header truncated", bytes.size());
  if (bytes[0] != 0 || bytes[1] != 0) throw FormatError("bad IDX magic", 0);
  IdxArray arr;
  arr.type = bytes[2];
  const std::size_t rank = bytes[3];
  if (arr.type != kIdxUByte && arr.type != kIdxDouble) {
    throw FormatError("unsupported IDX element type " + std::to_string(arr.type), 2);
  }
  if (rank == 0 || (expected_rank != 0 && rank != expected_rank)) {
    throw FormatError("unexpected IDX rank " + std::to_string(rank), 3);
  }
  const std::size_t header = 4 + 4 * rank;
  if (bytes.size() < header) throw FormatError("IDX dimension header truncated", bytes.size());
  std::size_t count = 1;
  for (std::size_t d = 0; d < rank; ++d) {
    arr.dims.push_back(detail::read_be32(bytes.data() + 4 + 4 * d));
    count *= arr.dims.back();
  }
  const std::size_t elem = arr.type == kIdxUByte ? 1 : 8;
  if (bytes.size() < header + count * elem) {
    throw FormatError("IDX payload truncated: expected " + std::to_string(header + count * elem) +
                          " bytes, file has " + std::to_string(bytes.size()),
                      bytes.size());
  }
  arr.values.resize(count);
  const unsigned char* p = bytes.data() + header;
  if (arr.type == kIdxUByte) {
    for (std::size_t i = 0; i < count; ++i) arr.values[i] = p[i];
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      std::uint64_t bits = 0;
      for (std::size_t k = 0; k < 8; ++k) bits = (bits << 8) | p[8 * i + k];
      arr.values[i] = std::bit_cast<double>(bits);
    }
  }
  return arr;
}

// Images (rank >= 2, flattened per example) + labels (rank 1, unsigned byte).
// `classes` of 0 means one more than the largest label.
inline Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                        std::size_t classes = 0) {
  const auto img_bytes = detail::read_file(images);
  const auto lbl_bytes = detail::read_file(labels);
  IdxArray img = parse_idx(img_bytes);
  if (img.dims.size() < 2) throw FormatError("IDX images need rank >= 2", 3);
  IdxArray lbl = parse_idx(lbl_bytes, 1);
  if (lbl.type != kIdxUByte) throw FormatError("IDX labels must be unsigned bytes", 2);
  if (lbl.dims[0] != img.dims[0]) {
    throw FormatError("label count " + std::to_string(lbl.dims[0]) + " does not match image count " +
                          std::to_string(img.dims[0]),
                      4);
  }
  const std::size_t n = img.dims[0];
  const std::size_t features = n == 0 ? 0 : img.values.size() / n;
  if (img.type == kIdxUByte) {
    for (double& v : img.values) v /= 255.0;
  }
  Dataset d;
  d.inputs = Matrix(n, features, std::move(img.values));
  std::size_t max_label = 0;
  for (double v : lbl.values) {
    d.labels.push_back(static_cast<std::size_t>(v));
    max_label = std::max(max_label, d.labels.back());
  }
  d.classes = classes != 0 ? classes : max_label + 1;
  d.validate();
  return d;
}

inline void write_idx_doubles(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os.put(0);
  os.put(0);
  os.put(static_cast<char>(kIdxDouble));
  os.put(2);
  detail::write_be32(os, static_cast<std::uint32_t>(m.rows()));
  detail::write_be32(os, static_cast<std::uint32_t>(m.cols()));
  for (double v : m.values()) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int k = 7; k >= 0; --k) os.put(static_cast<char>((bits >> (8 * k)) & 0xFF));
  }
  if (!os) throw IoError("failed writing " + path.string());
}

inline void write_idx_labels(const std::filesystem::path& path, std::span<const std::size_t> labels) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  detail::write_be32(os, kIdxLabelsMagic);
  detail::write_be32(os, static_cast<std::uint32_t>(labels.size()));
  for (std::size_t y : labels) {
    if (y > 255) throw ConfigError("IDX labels must fit in one byte");
    os.put(static_cast<char>(y));
  }
  if (!os) throw IoError("failed writing " + path.string());
}

struct DataFiles {
  std::filesystem::path train_images, train_labels, test_images, test_labels;

  static DataFiles in(const std::filesystem::path& dir) {
    return {dir / "train-images.idx", dir / "train-labels.idx", dir / "test-images.idx",
            dir / "test-labels.idx"};
  }
};

inline DataFiles write_dataset(const TrainTest& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const DataFiles f = DataFiles::in(dir);
  write_idx_doubles(f.train_images, data.train.inputs);
  write_idx_labels(f.train_labels, data.train.labels);
  write_idx_doubles(f.test_images, data.test.inputs);
  write_idx_labels(f.test_labels, data.test.labels);
  return f;
}

inline TrainTest load_dataset(const DataFiles& f, std::size_t classes = 0) {
  TrainTest out;
  out.train = load_idx(f.train_images, f.train_labels, classes);
  out.test = load_idx(f.test_images, f.test_labels, classes);
  const std::size_t c = std::max(out.train.classes, out.test.classes);
  out.train.classes = out.test.classes = c;
  return out;
}

}  // namespace purl
