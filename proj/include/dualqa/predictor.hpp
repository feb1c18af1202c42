#ifndef DUALQA_PREDICTOR_HPP
#define DUALQA_PREDICTOR_HPP

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "dualqa/errors.hpp"
#include "dualqa/image.hpp"

namespace dualqa {

/// Per-class confidence vector plus its argmax label. Confidences lie in
/// [0, 1] and sum to 1 within 1e-6; ties break to the lowest class index.
struct SoftPrediction {
  std::vector<double> confidences;
  int label = 0;
};

inline SoftPrediction make_soft_prediction(std::vector<double> confidences) {
  if (confidences.empty())
    throw MalformedResponseError("prediction has no classes");
  double sum = 0.0;
  for (double v : confidences) {
    if (!(v >= 0.0 && v <= 1.0))
      throw MalformedResponseError("confidence " + std::to_string(v) +
                                   " outside [0, 1]");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw MalformedResponseError("confidences sum to " + std::to_string(sum));
  SoftPrediction p;
  p.label = static_cast<int>(
      std::max_element(confidences.begin(), confidences.end()) -
      confidences.begin());
  p.confidences = std::move(confidences);
  return p;
}

/// Numerically stable softmax; shifting logits by a constant leaves the
/// result unchanged.
inline SoftPrediction softmax_prediction(const std::vector<double>& logits) {
  double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return make_soft_prediction(std::move(p));
}

/// Black-box soft-label classifier. Consumers see only forward
/// evaluations: no gradients, no internals. The evaluation counter
/// increments exactly once per predict call and is what attack budgets are
/// audited against.
class Predictor {
 public:
  Predictor() = default;
  // The counter is per-instance audit state; copies start at zero.
  Predictor(const Predictor&) noexcept {}
  Predictor& operator=(const Predictor&) noexcept { return *this; }
  virtual ~Predictor() = default;

  virtual int num_classes() const = 0;
  virtual int input_height() const = 0;
  virtual int input_width() const = 0;
  virtual int input_channels() const = 0;

  SoftPrediction predict(const Image& x) {
    if (x.height() != input_height() || x.width() != input_width() ||
        x.channels() != input_channels())
      throw ShapeMismatchError("predict: image shape does not match model");
    evaluations_.fetch_add(1, std::memory_order_relaxed);
    return do_predict(x);
  }

  std::uint64_t evaluations() const {
    return evaluations_.load(std::memory_order_relaxed);
  }

 protected:
  virtual SoftPrediction do_predict(const Image& x) const = 0;

 private:
  std::atomic<std::uint64_t> evaluations_{0};
};

namespace detail {

inline void relu_inplace(std::vector<double>& v) {
  for (double& x : v)
    if (x < 0.0) x = 0.0;
}

}  // namespace detail

/// logits = W x + b over the flattened pixel vector. Training standardizes
/// inputs to [0, 1] and folds the 1/255 scale into the stored weights, so
/// predict consumes [0, 255] images directly.
class LinearSoftmax final : public Predictor {
 public:
  LinearSoftmax(int height, int width, int channels, int num_classes)
      : h_(height), w_(width), c_(channels), classes_(num_classes) {
    weights_.assign(static_cast<std::size_t>(classes_) * input_dim(), 0.0);
    bias_.assign(classes_, 0.0);
  }

  int num_classes() const override { return classes_; }
  int input_height() const override { return h_; }
  int input_width() const override { return w_; }
  int input_channels() const override { return c_; }
  std::size_t input_dim() const {
    return static_cast<std::size_t>(h_) * w_ * c_;
  }

  std::vector<double>& weights() { return weights_; }
  std::vector<double>& bias() { return bias_; }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<double>& bias() const { return bias_; }

 protected:
  SoftPrediction do_predict(const Image& x) const override {
    std::vector<double> logits(classes_);
    const auto& px = x.pixels();
    for (int cls = 0; cls < classes_; ++cls) {
      double s = bias_[cls];
      const double* row = weights_.data() + static_cast<std::size_t>(cls) * px.size();
      for (std::size_t i = 0; i < px.size(); ++i) s += row[i] * px[i];
      logits[cls] = s;
    }
    return softmax_prediction(logits);
  }

 private:
  int h_, w_, c_, classes_;
  std::vector<double> weights_;  // classes x k, row-major
  std::vector<double> bias_;
};

/// One rectified hidden layer: logits = W2 relu(W1 x + b1) + b2.
class MlpOneHidden final : public Predictor {
 public:
  MlpOneHidden(int height, int width, int channels, int num_classes,
               int hidden)
      : h_(height), w_(width), c_(channels), classes_(num_classes),
        hidden_(hidden) {
    w1_.assign(static_cast<std::size_t>(hidden_) * input_dim(), 0.0);
    b1_.assign(hidden_, 0.0);
    w2_.assign(static_cast<std::size_t>(classes_) * hidden_, 0.0);
    b2_.assign(classes_, 0.0);
  }

  int num_classes() const override { return classes_; }
  int input_height() const override { return h_; }
  int input_width() const override { return w_; }
  int input_channels() const override { return c_; }
  int hidden_width() const { return hidden_; }
  std::size_t input_dim() const {
    return static_cast<std::size_t>(h_) * w_ * c_;
  }

  std::vector<double>& w1() { return w1_; }
  std::vector<double>& b1() { return b1_; }
  std::vector<double>& w2() { return w2_; }
  std::vector<double>& b2() { return b2_; }
  const std::vector<double>& w1() const { return w1_; }
  const std::vector<double>& b1() const { return b1_; }
  const std::vector<double>& w2() const { return w2_; }
  const std::vector<double>& b2() const { return b2_; }

 protected:
  SoftPrediction do_predict(const Image& x) const override {
    const auto& px = x.pixels();
    std::vector<double> hid(hidden_);
    for (int j = 0; j < hidden_; ++j) {
      double s = b1_[j];
      const double* row = w1_.data() + static_cast<std::size_t>(j) * px.size();
      for (std::size_t i = 0; i < px.size(); ++i) s += row[i] * px[i];
      hid[j] = s;
    }
    detail::relu_inplace(hid);
    std::vector<double> logits(classes_);
    for (int cls = 0; cls < classes_; ++cls) {
      double s = b2_[cls];
      const double* row = w2_.data() + static_cast<std::size_t>(cls) * hidden_;
      for (int j = 0; j < hidden_; ++j) s += row[j] * hid[j];
      logits[cls] = s;
    }
    return softmax_prediction(logits);
  }

 private:
  int h_, w_, c_, classes_, hidden_;
  std::vector<double> w1_, b1_, w2_, b2_;
};

// -- weight files --------------------------------------------------------
//
// Layout: magic "DQAW", u16 version (LE), u8 kind (0 linear, 1 mlp), then
// u32 LE h, w, c, num_classes [, hidden for mlp], then the parameters as
// little-endian 64-bit floats (linear: W then b; mlp: W1, b1, W2, b2).

namespace detail {

constexpr char kWeightMagic[4] = {'D', 'Q', 'A', 'W'};
constexpr std::uint16_t kWeightVersion = 1;

inline void put_u16_le(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64_le(std::string& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  ByteReader(const std::string& s) : data_(s) {}
  bool exhausted() const { return pos_ == data_.size(); }

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint16_t u16_le() {
    need(2);
    std::uint16_t v = static_cast<std::uint8_t>(data_[pos_]) |
                      (static_cast<std::uint16_t>(
                           static_cast<std::uint8_t>(data_[pos_ + 1]))
                       << 8);
    pos_ += 2;
    return v;
  }
  std::uint32_t u32_le() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(data_[pos_ + i]))
           << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64_le() {
    need(8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
      bits |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(data_[pos_ + i]))
              << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(bits);
  }

 private:
  void need(std::size_t n) {
    if (pos_ + n > data_.size())
      throw WeightShapeError("weight file truncated");
  }
  const std::string& data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_weights(const Predictor& p) {
  std::string out;
  out.append(detail::kWeightMagic, 4);
  detail::put_u16_le(out, detail::kWeightVersion);
  if (auto* lin = dynamic_cast<const LinearSoftmax*>(&p)) {
    out.push_back(0);
    detail::put_u32_le(out, static_cast<std::uint32_t>(lin->input_height()));
    detail::put_u32_le(out, static_cast<std::uint32_t>(lin->input_width()));
    detail::put_u32_le(out, static_cast<std::uint32_t>(lin->input_channels()));
    detail::put_u32_le(out, static_cast<std::uint32_t>(lin->num_classes()));
    for (double v : lin->weights()) detail::put_f64_le(out, v);
    for (double v : lin->bias()) detail::put_f64_le(out, v);
  } else if (auto* mlp = dynamic_cast<const MlpOneHidden*>(&p)) {
    out.push_back(1);
    detail::put_u32_le(out, static_cast<std::uint32_t>(mlp->input_height()));
    detail::put_u32_le(out, static_cast<std::uint32_t>(mlp->input_width()));
    detail::put_u32_le(out, static_cast<std::uint32_t>(mlp->input_channels()));
    detail::put_u32_le(out, static_cast<std::uint32_t>(mlp->num_classes()));
    detail::put_u32_le(out, static_cast<std::uint32_t>(mlp->hidden_width()));
    for (double v : mlp->w1()) detail::put_f64_le(out, v);
    for (double v : mlp->b1()) detail::put_f64_le(out, v);
    for (double v : mlp->w2()) detail::put_f64_le(out, v);
    for (double v : mlp->b2()) detail::put_f64_le(out, v);
  } else {
    throw Error("serialize_weights: unsupported predictor kind");
  }
  return out;
}

inline std::unique_ptr<Predictor> deserialize_weights(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), detail::kWeightMagic, 4) != 0)
    throw BadMagicError("weight file: bad magic");
  detail::ByteReader r(bytes);
  r.u32_le();  // skip magic, already checked
  std::uint16_t version = r.u16_le();
  if (version != detail::kWeightVersion)
    throw VersionMismatchError("weight file: version " +
                               std::to_string(version) + " unsupported");
  std::uint8_t kind = r.u8();
  auto dims_ok = [](std::uint32_t h, std::uint32_t w, std::uint32_t c,
                    std::uint32_t n) {
    return h > 0 && w > 0 && (c == 1 || c == 3) && n >= 2 && h < (1u << 16) &&
           w < (1u << 16);
  };
  if (kind == 0) {
    std::uint32_t h = r.u32_le(), w = r.u32_le(), c = r.u32_le(),
                  n = r.u32_le();
    if (!dims_ok(h, w, c, n))
      throw WeightShapeError("weight file: invalid linear shape header");
    auto model = std::make_unique<LinearSoftmax>(h, w, c, n);
    for (double& v : model->weights()) v = r.f64_le();
    for (double& v : model->bias()) v = r.f64_le();
    if (!r.exhausted())
      throw WeightShapeError("weight file: trailing bytes");
    return model;
  }
  if (kind == 1) {
    std::uint32_t h = r.u32_le(), w = r.u32_le(), c = r.u32_le(),
                  n = r.u32_le(), hidden = r.u32_le();
    if (!dims_ok(h, w, c, n) || hidden == 0 || hidden > (1u << 20))
      throw WeightShapeError("weight file: invalid mlp shape header");
    auto model = std::make_unique<MlpOneHidden>(h, w, c, n, hidden);
    for (double& v : model->w1()) v = r.f64_le();
    for (double& v : model->b1()) v = r.f64_le();
    for (double& v : model->w2()) v = r.f64_le();
    for (double& v : model->b2()) v = r.f64_le();
    if (!r.exhausted())
      throw WeightShapeError("weight file: trailing bytes");
    return model;
  }
  throw WeightShapeError("weight file: unknown model kind " +
                         std::to_string(kind));
}

inline void save_weights(const Predictor& p, const std::filesystem::path& path) {
  std::string bytes = serialize_weights(p);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("write failed for " + path.string());
}

inline std::unique_ptr<Predictor> load_weights(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
  return deserialize_weights(bytes);
}

}  // namespace dualqa

#endif  // DUALQA_PREDICTOR_HPP
