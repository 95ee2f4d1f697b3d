#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dnnshield/tensor.hpp"

namespace dnnshield {

struct Dataset {
  Tensor samples;           // [N, ...]
  std::vector<int> labels;  // N entries in [0, classes)
  std::size_t classes = 0;
  std::string split;        // "train" or "test"

  std::size_t size() const noexcept { return labels.size(); }
  Shape sample_shape() const;
  // Copy of samples [begin, end).
  Dataset slice(std::size_t begin, std::size_t end) const;
  // Throws InputError unless samples and labels agree and every label is in range.
  void validate() const;
};

// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
// Pixels are scaled to [0,1]; subset_size > 0 keeps the first samples only.
Dataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                       std::size_t subset_size = 0, const std::string& split = "train");

// Looks for the standard file names (train-images-idx3-ubyte, t10k-...) in dir.
std::optional<Dataset> try_load_mnist_dir(const std::filesystem::path& dir, const std::string& split,
                                          std::size_t subset_size);

// Gaussian class blobs with unit noise around class means at least `margin`
// apart; flattened samples shaped like sample_shape.
Dataset make_synthetic_dataset(std::size_t classes, std::size_t n, std::uint64_t seed,
                               const Shape& sample_shape = {1, 28, 28}, double margin = 8.0,
                               const std::string& split = "train");

// Procedurally rendered 28x28 digit strokes under random affine distortion,
// stroke width and pixel noise. Stand-in for MNIST when the IDX files are absent.
Dataset make_digit_dataset(std::size_t n, std::uint64_t seed, const std::string& split = "train");

struct DataPair {
  Dataset train;
  Dataset test;
  std::string source;  // "mnist:<dir>" or "rendered-digits"
};

// MNIST subsets from data_dir when present, rendered digits otherwise.
DataPair load_desk_data(const std::optional<std::filesystem::path>& data_dir, std::size_t n_train,
                        std::size_t n_test, std::uint64_t seed);

// DNNSHIELD_DATA_DIR, if set.
std::optional<std::filesystem::path> default_data_dir();

}  // namespace dnnshield
