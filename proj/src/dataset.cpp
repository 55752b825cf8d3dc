#include "renas/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace renas {

std::vector<double> Dataset::image(int i) const {
  const std::size_t n = std::size_t(channels_) * height_ * width_;
  std::vector<double> out(n);
  if (u8_) {
    const std::uint8_t* src = bytes_.data() + std::size_t(i) * n;
    const std::size_t plane = std::size_t(height_) * width_;
    for (int c = 0; c < channels_; ++c)
      for (std::size_t p = 0; p < plane; ++p)
        out[c * plane + p] = (src[c * plane + p] / 255.0 - mean_[c]) / std_[c];
  } else {
    const double* src = reals_.data() + std::size_t(i) * n;
    std::copy(src, src + n, out.begin());
  }
  return out;
}

std::vector<std::uint8_t> Dataset::raw_record(int i) const {
  if (!u8_) throw std::logic_error("raw_record: dataset is not byte-backed");
  const std::size_t n = std::size_t(channels_) * height_ * width_;
  std::vector<std::uint8_t> rec(1 + n);
  rec[0] = std::uint8_t(labels_[i]);
  std::copy(bytes_.begin() + std::size_t(i) * n,
            bytes_.begin() + std::size_t(i + 1) * n, rec.begin() + 1);
  return rec;
}

Dataset Dataset::subset(const std::vector<int>& indices) const {
  Dataset out;
  out.classes_ = classes_;
  out.channels_ = channels_;
  out.height_ = height_;
  out.width_ = width_;
  out.u8_ = u8_;
  out.mean_ = mean_;
  out.std_ = std_;
  const std::size_t n = std::size_t(channels_) * height_ * width_;
  for (int i : indices) {
    if (i < 0 || i >= size())
      throw std::out_of_range("subset: index " + std::to_string(i));
    out.labels_.push_back(labels_[i]);
    if (u8_)
      out.bytes_.insert(out.bytes_.end(), bytes_.begin() + std::size_t(i) * n,
                        bytes_.begin() + std::size_t(i + 1) * n);
    else
      out.reals_.insert(out.reals_.end(), reals_.begin() + std::size_t(i) * n,
                        reals_.begin() + std::size_t(i + 1) * n);
  }
  return out;
}

namespace {

constexpr int kCifarSide = 32;
constexpr int kCifarChannels = 3;
constexpr std::size_t kCifarRecord = 1 + 3072;
constexpr std::size_t kCifarPerFile = 10000;

void read_cifar_file(const std::string& path, std::vector<std::uint8_t>& bytes,
                     std::vector<int>& labels) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("cifar10: cannot open " + path);
  const auto sz = std::size_t(in.tellg());
  if (sz != kCifarPerFile * kCifarRecord)
    throw std::runtime_error("cifar10: " + path + " has " + std::to_string(sz) +
                             " bytes, expected " +
                             std::to_string(kCifarPerFile * kCifarRecord));
  in.seekg(0);
  std::vector<std::uint8_t> buf(sz);
  in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(sz));
  for (std::size_t r = 0; r < kCifarPerFile; ++r) {
    const std::uint8_t label = buf[r * kCifarRecord];
    if (label > 9)
      throw std::runtime_error("cifar10: " + path + " record " +
                               std::to_string(r) + " has label " +
                               std::to_string(int(label)));
    labels.push_back(label);
    bytes.insert(bytes.end(), buf.begin() + r * kCifarRecord + 1,
                 buf.begin() + (r + 1) * kCifarRecord);
  }
}

}  // namespace

std::pair<Dataset, Dataset> load_cifar10(const std::string& dir_path) {
  Dataset train, test;
  for (Dataset* d : {&train, &test}) {
    d->classes_ = 10;
    d->channels_ = kCifarChannels;
    d->height_ = kCifarSide;
    d->width_ = kCifarSide;
    d->u8_ = true;
  }
  for (int f = 1; f <= 5; ++f)
    read_cifar_file(dir_path + "/data_batch_" + std::to_string(f) + ".bin",
                    train.bytes_, train.labels_);
  read_cifar_file(dir_path + "/test_batch.bin", test.bytes_, test.labels_);

  // training-set channel statistics on the [0,1] scale
  const std::size_t plane = std::size_t(kCifarSide) * kCifarSide;
  const std::size_t img = plane * kCifarChannels;
  std::vector<double> mean(3, 0.0), var(3, 0.0);
  const std::size_t n_imgs = train.labels_.size();
  for (std::size_t i = 0; i < n_imgs; ++i)
    for (int c = 0; c < 3; ++c) {
      const std::uint8_t* p = train.bytes_.data() + i * img + c * plane;
      double s = 0.0;
      for (std::size_t k = 0; k < plane; ++k) s += p[k] / 255.0;
      mean[c] += s;
    }
  for (int c = 0; c < 3; ++c) mean[c] /= double(n_imgs) * plane;
  for (std::size_t i = 0; i < n_imgs; ++i)
    for (int c = 0; c < 3; ++c) {
      const std::uint8_t* p = train.bytes_.data() + i * img + c * plane;
      double s = 0.0;
      for (std::size_t k = 0; k < plane; ++k) {
        const double d = p[k] / 255.0 - mean[c];
        s += d * d;
      }
      var[c] += s;
    }
  std::vector<double> sd(3);
  for (int c = 0; c < 3; ++c)
    sd[c] = std::max(std::sqrt(var[c] / (double(n_imgs) * plane)), 1e-8);
  train.mean_ = test.mean_ = mean;
  train.std_ = test.std_ = sd;
  return {std::move(train), std::move(test)};
}

namespace {

// Distinct deterministic class templates on a side x side grid, values in
// {-1, +1}.
double pattern_value(int cls, int h, int w, int side) {
  const int q = std::max(side / 4, 1);
  switch (cls) {
    case 0: return (h / q) % 2 == 0 ? 1.0 : -1.0;            // horizontal stripes
    case 1: return (w / q) % 2 == 0 ? 1.0 : -1.0;            // vertical stripes
    case 2: return ((h / q) + (w / q)) % 2 == 0 ? 1.0 : -1.0; // checkerboard
    case 3: return 1.0;                                       // solid
    case 4: return ((h + w) / q) % 2 == 0 ? 1.0 : -1.0;       // diagonal stripes
    case 5: {                                                 // centered disc
      const double dh = h - (side - 1) / 2.0, dw = w - (side - 1) / 2.0;
      return std::sqrt(dh * dh + dw * dw) < side / 3.0 ? 1.0 : -1.0;
    }
    case 6: return h < side / 2 ? 1.0 : -1.0;                 // half split
    case 7: return (h / q + 2 * (w / q)) % 3 == 0 ? 1.0 : -1.0;
    default: return 0.0;
  }
}

constexpr int kPatternCount = 8;

}  // namespace

std::pair<Dataset, Dataset> gen_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 2)
    throw std::invalid_argument("gen_synthetic: need at least 2 classes");
  if (spec.classes > kPatternCount)
    throw std::invalid_argument("gen_synthetic: only " +
                                std::to_string(kPatternCount) +
                                " pattern templates available, requested " +
                                std::to_string(spec.classes));
  if (spec.side < 8)
    throw std::invalid_argument("gen_synthetic: side must be >= 8");

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset all;
  all.classes_ = spec.classes;
  all.channels_ = 1;
  all.height_ = all.width_ = spec.side;
  all.u8_ = false;
  const std::size_t plane = std::size_t(spec.side) * spec.side;
  for (int cls = 0; cls < spec.classes; ++cls)
    for (int s = 0; s < spec.samples_per_class; ++s) {
      all.labels_.push_back(cls);
      for (int h = 0; h < spec.side; ++h)
        for (int w = 0; w < spec.side; ++w) {
          double v = pattern_value(cls, h, w, spec.side);
          if (spec.noise_sigma > 0.0) v += spec.noise_sigma * noise(rng);
          all.reals_.push_back(v);
        }
    }
  (void)plane;

  // class-interleaved 80/20 split keeps both sides balanced
  std::vector<int> train_idx, test_idx;
  for (int i = 0; i < all.size(); ++i)
    ((i % spec.samples_per_class) % 5 == 4 ? test_idx : train_idx).push_back(i);
  return {all.subset(train_idx), all.subset(test_idx)};
}

std::pair<Dataset, Dataset> open_dataset(const DatasetDesc& desc,
                                         std::uint64_t seed) {
  if (desc.kind == "cifar10") return load_cifar10(desc.path);
  SyntheticSpec spec;
  spec.classes = desc.classes;
  spec.side = desc.side;
  spec.noise_sigma = desc.noise_sigma;
  spec.samples_per_class = desc.samples_per_class;
  spec.seed = seed;
  return gen_synthetic(spec);
}

ImageBatch make_batch(const Dataset& data, const std::vector<int>& indices) {
  const int B = int(indices.size());
  auto images =
      make_tensor({B, data.channels(), data.height(), data.width()});
  const std::size_t n =
      std::size_t(data.channels()) * data.height() * data.width();
  ImageBatch batch;
  for (int b = 0; b < B; ++b) {
    const auto img = data.image(indices[b]);
    std::copy(img.begin(), img.end(), images->values.begin() + b * n);
    batch.labels.push_back(data.labels()[indices[b]]);
  }
  batch.images = images;
  return batch;
}

ImageBatch augment_flip(const ImageBatch& batch, std::mt19937_64& rng, double p) {
  const auto& x = batch.images;
  const int B = x->shape[0], C = x->shape[1], H = x->shape[2], W = x->shape[3];
  ImageBatch out;
  out.labels = batch.labels;
  out.images = make_tensor(x->shape, x->values);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int b = 0; b < B; ++b) {
    if (u(rng) >= p) continue;
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W / 2; ++w)
          std::swap(out.images->at(b, c, h, w), out.images->at(b, c, h, W - 1 - w));
  }
  return out;
}

BatchIter::BatchIter(const Dataset& data, int batch_size, std::uint64_t seed,
                     int epoch)
    : data_(&data), batch_size_(batch_size) {
  if (data.size() == 0) throw std::invalid_argument("batch_iter: empty dataset");
  if (batch_size < 1) throw std::invalid_argument("batch_iter: batch_size must be >= 1");
  order_.resize(std::size_t(data.size()));
  std::iota(order_.begin(), order_.end(), 0);
  std::mt19937_64 rng(seed + 0x9e3779b97f4a7c15ULL * std::uint64_t(epoch + 1));
  std::shuffle(order_.begin(), order_.end(), rng);
}

bool BatchIter::next(ImageBatch& out) {
  if (pos_ >= order_.size()) return false;
  const std::size_t end = std::min(pos_ + std::size_t(batch_size_), order_.size());
  std::vector<int> idx(order_.begin() + std::ptrdiff_t(pos_),
                       order_.begin() + std::ptrdiff_t(end));
  pos_ = end;
  out = make_batch(*data_, idx);
  return true;
}

}  // namespace renas
