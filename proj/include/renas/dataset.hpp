#ifndef RENAS_DATASET_HPP
#define RENAS_DATASET_HPP

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "renas/config.hpp"
#include "renas/tensor.hpp"

namespace renas {

/// A normalized mini-batch: images (batch, C, H, W) plus integer labels.
struct ImageBatch {
  TensorPtr images;
  std::vector<int> labels;
};

struct SyntheticSpec {
  int classes = 4;
  int side = 16;
  double noise_sigma = 0.3;
  int samples_per_class = 500;
  std::uint64_t seed = 0;
};

/// In-memory image set. CIFAR keeps raw bytes and normalizes lazily;
/// synthetic sets are stored as doubles directly.
class Dataset {
 public:
  int size() const { return labels_.empty() ? 0 : int(labels_.size()); }
  int classes() const { return classes_; }
  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  const std::vector<int>& labels() const { return labels_; }
  const std::vector<double>& channel_mean() const { return mean_; }
  const std::vector<double>& channel_std() const { return std_; }

  /// Normalized pixel values of image i, length C*H*W.
  std::vector<double> image(int i) const;
  /// Raw CIFAR record (1 label byte + C*H*W pixel bytes); u8-backed sets only.
  std::vector<std::uint8_t> raw_record(int i) const;

  Dataset subset(const std::vector<int>& indices) const;

  friend std::pair<Dataset, Dataset> load_cifar10(const std::string& dir_path);
  friend std::pair<Dataset, Dataset> gen_synthetic(const SyntheticSpec& spec);

 private:
  int classes_ = 0, channels_ = 0, height_ = 0, width_ = 0;
  bool u8_ = false;
  std::vector<std::uint8_t> bytes_;   // u8-backed storage
  std::vector<double> reals_;         // double-backed storage
  std::vector<int> labels_;
  std::vector<double> mean_, std_;    // per-channel, applied after /255 for u8
};

/// Reads the six canonical binary batch files from dir_path. Pixels are
/// scaled to [0,1] and standardized per channel with constants computed
/// from the training set.
std::pair<Dataset, Dataset> load_cifar10(const std::string& dir_path);

/// Deterministic pattern-classification set, split 80/20 train/test.
std::pair<Dataset, Dataset> gen_synthetic(const SyntheticSpec& spec);

/// Builds a Dataset from config.dataset (loading or generating as needed).
std::pair<Dataset, Dataset> open_dataset(const DatasetDesc& desc,
                                         std::uint64_t seed);

/// Horizontal mirror with probability p per image; labels untouched.
ImageBatch augment_flip(const ImageBatch& batch, std::mt19937_64& rng,
                        double p = 0.5);

/// Seeded per-epoch shuffle; emits every sample exactly once, final batch
/// may be short.
class BatchIter {
 public:
  BatchIter(const Dataset& data, int batch_size, std::uint64_t seed, int epoch);
  bool next(ImageBatch& out);

 private:
  const Dataset* data_;
  int batch_size_;
  std::vector<int> order_;
  std::size_t pos_ = 0;
};

/// Materializes a batch from explicit dataset indices.
ImageBatch make_batch(const Dataset& data, const std::vector<int>& indices);

}  // namespace renas

#endif
