#ifndef DUALQA_DATASET_HPP
#define DUALQA_DATASET_HPP

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "dualqa/errors.hpp"
#include "dualqa/image.hpp"
#include "dualqa/rng.hpp"

namespace dualqa {

struct LabeledSample {
  Image image;
  int label = 0;
  std::int64_t id = 0;
};

struct Dataset {
  std::vector<LabeledSample> samples;
  int num_classes = 0;
  std::vector<std::string> class_names;  // optional, may be empty

  bool empty() const { return samples.empty(); }
  std::size_t size() const { return samples.size(); }
};

// -- CIFAR-10 binary format ----------------------------------------------
//
// One record = 3073 bytes: label byte (0..9) followed by three 1024-byte
// color planes (red, green, blue), each row-major 32x32. Planes are
// converted to the interleaved Image layout on read.

constexpr int kCifarDim = 32;
constexpr int kCifarChannels = 3;
constexpr std::size_t kCifarRecordBytes =
    1 + static_cast<std::size_t>(kCifarDim) * kCifarDim * kCifarChannels;

inline const std::vector<std::string>& cifar10_class_names() {
  static const std::vector<std::string> names = {
      "airplane", "automobile", "bird",  "cat",  "deer",
      "dog",      "frog",       "horse", "ship", "truck"};
  return names;
}

/// Streams 3073-byte records; never buffers the whole file.
inline Dataset parse_cifar10_binary(std::istream& in) {
  Dataset d;
  d.num_classes = 10;
  d.class_names = cifar10_class_names();

  std::vector<char> record(kCifarRecordBytes);
  std::int64_t index = 0;
  const int plane = kCifarDim * kCifarDim;
  while (true) {
    in.read(record.data(), static_cast<std::streamsize>(record.size()));
    std::streamsize got = in.gcount();
    if (got == 0) break;
    if (got != static_cast<std::streamsize>(kCifarRecordBytes))
      throw TruncatedRecordError(
          "cifar10: trailing " + std::to_string(got) +
          " bytes are not a whole 3073-byte record");
    auto label = static_cast<unsigned char>(record[0]);
    if (label > 9)
      throw InvalidLabelError("cifar10: record " + std::to_string(index) +
                              " has label byte " + std::to_string(label));
    std::vector<double> px(static_cast<std::size_t>(plane) * kCifarChannels);
    for (int ch = 0; ch < kCifarChannels; ++ch) {
      const char* src = record.data() + 1 + static_cast<std::size_t>(ch) * plane;
      for (int p = 0; p < plane; ++p)
        px[static_cast<std::size_t>(p) * kCifarChannels + ch] =
            static_cast<double>(static_cast<unsigned char>(src[p]));
    }
    d.samples.push_back({Image(kCifarDim, kCifarDim, kCifarChannels,
                               std::move(px)),
                         static_cast<int>(label), index});
    ++index;
  }
  return d;
}

inline Dataset parse_cifar10_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  return parse_cifar10_binary(f);
}

/// Writes samples back out in the CIFAR-10 binary layout. Images parsed
/// from that format round-trip bit-exactly; other (real-valued) images are
/// quantized to the nearest integer.
inline void serialize_cifar10_binary(const Dataset& d, std::ostream& out) {
  const int plane = kCifarDim * kCifarDim;
  for (const auto& s : d.samples) {
    if (s.image.height() != kCifarDim || s.image.width() != kCifarDim ||
        s.image.channels() != kCifarChannels)
      throw ShapeMismatchError("cifar10 export requires 32x32x3 images");
    if (s.label < 0 || s.label > 9)
      throw InvalidLabelError("cifar10 export: label " +
                              std::to_string(s.label) + " outside 0..9");
    std::string record(kCifarRecordBytes, '\0');
    record[0] = static_cast<char>(s.label);
    for (int ch = 0; ch < kCifarChannels; ++ch)
      for (int p = 0; p < plane; ++p) {
        long q = std::lround(
            s.image.pixels()[static_cast<std::size_t>(p) * kCifarChannels + ch]);
        record[1 + static_cast<std::size_t>(ch) * plane + p] =
            static_cast<char>(std::clamp(q, 0L, 255L));
      }
    out.write(record.data(), static_cast<std::streamsize>(record.size()));
  }
}

// -- synthetic data --------------------------------------------------------

/// Gaussian class blobs around per-class template images. Templates are
/// drawn once per class as 128 + separation * N(0,1), clipped to range;
/// samples add N(0, 20) pixel noise on top. separation = 0 makes all class
/// templates identical (chance-level separability); large values give
/// linearly separable classes. Byte-for-byte deterministic in the seed.
inline Dataset synth_blobs(int num_classes, int per_class, int height,
                           int width, int channels, double separation,
                           std::uint64_t seed) {
  if (num_classes < 2)
    throw Error("synth_blobs: need at least 2 classes");
  if (per_class < 1)
    throw Error("synth_blobs: need at least 1 sample per class");

  constexpr double kNoiseSigma = 20.0;
  Rng rng(derive_seed(seed, 0x626c6f62));  // "blob"
  const std::size_t k = static_cast<std::size_t>(height) * width * channels;

  std::vector<std::vector<double>> templates(num_classes);
  for (auto& t : templates) {
    t.resize(k);
    for (double& v : t) v = clip_pixel(128.0 + separation * rng.normal());
  }

  Dataset d;
  d.num_classes = num_classes;
  std::int64_t id = 0;
  for (int cls = 0; cls < num_classes; ++cls)
    for (int i = 0; i < per_class; ++i) {
      std::vector<double> px(k);
      for (std::size_t j = 0; j < k; ++j)
        px[j] = clip_pixel(templates[cls][j] + kNoiseSigma * rng.normal());
      d.samples.push_back({Image(height, width, channels, std::move(px)),
                           cls, id++});
    }
  return d;
}

// -- evaluation sample selection -------------------------------------------

/// Draws n samples uniformly (seeded Fisher-Yates) from the dataset,
/// optionally restricted to samples the predictor already classifies
/// correctly. Attacking misclassified inputs would count trivial successes,
/// so the restriction defaults on in callers.
template <typename P>
std::vector<LabeledSample> select_eval_samples(const Dataset& d, P& predictor,
                                               int n, std::uint64_t seed,
                                               bool correctly_classified_only) {
  std::vector<std::size_t> pool;
  pool.reserve(d.samples.size());
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    if (correctly_classified_only &&
        predictor.predict(d.samples[i].image).label != d.samples[i].label)
      continue;
    pool.push_back(i);
  }
  if (static_cast<std::size_t>(n) > pool.size())
    throw InsufficientSamplesError(
        "requested " + std::to_string(n) + " samples but only " +
        std::to_string(pool.size()) + " are eligible");
  Rng rng(derive_seed(seed, 0x73656c65));  // "sele"
  rng.shuffle(pool);
  std::vector<LabeledSample> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(d.samples[pool[i]]);
  return out;
}

}  // namespace dualqa

#endif  // DUALQA_DATASET_HPP
