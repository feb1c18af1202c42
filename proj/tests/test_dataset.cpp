#include <doctest.h>

#include <sstream>
#include <vector>

#include "dualqa/dataset.hpp"
#include "dualqa/predictor.hpp"

using namespace dualqa;

namespace {

// 3073-byte CIFAR record with constant planes.
std::string make_record(unsigned char label, unsigned char r, unsigned char g,
                        unsigned char b) {
  std::string rec(kCifarRecordBytes, '\0');
  rec[0] = static_cast<char>(label);
  for (int p = 0; p < 1024; ++p) {
    rec[1 + p] = static_cast<char>(r);
    rec[1 + 1024 + p] = static_cast<char>(g);
    rec[1 + 2048 + p] = static_cast<char>(b);
  }
  return rec;
}

// Always predicts the class given by a fixed label map; used to drive
// selection filters without training anything.
class FixedLabelPredictor final : public Predictor {
 public:
  FixedLabelPredictor(int h, int w, int c, int classes,
                      std::vector<int> labels)
      : h_(h), w_(w), c_(c), classes_(classes), labels_(std::move(labels)) {}

  int num_classes() const override { return classes_; }
  int input_height() const override { return h_; }
  int input_width() const override { return w_; }
  int input_channels() const override { return c_; }

 protected:
  SoftPrediction do_predict(const Image&) const override {
    int label = labels_[calls_++ % labels_.size()];
    std::vector<double> conf(classes_, 0.0);
    conf[label] = 1.0;
    return make_soft_prediction(std::move(conf));
  }

 private:
  int h_, w_, c_, classes_;
  std::vector<int> labels_;
  mutable std::size_t calls_ = 0;
};

}  // namespace

TEST_CASE("cifar10 parser decodes a hand-built record") {
  std::string data = make_record(7, 255, 0, 0);
  std::istringstream in(data, std::ios::binary);
  Dataset d = parse_cifar10_binary(in);
  REQUIRE(d.size() == 1);
  CHECK(d.num_classes == 10);
  CHECK(d.samples[0].label == 7);
  CHECK(d.samples[0].id == 0);
  const Image& img = d.samples[0].image;
  CHECK(img.at(0, 0, 0) == 255.0);
  CHECK(img.at(0, 0, 1) == 0.0);
  CHECK(img.at(0, 0, 2) == 0.0);
  CHECK(img.at(31, 31, 0) == 255.0);
}

TEST_CASE("cifar10 parser handles empty and malformed streams") {
  {
    std::istringstream in(std::string(), std::ios::binary);
    Dataset d = parse_cifar10_binary(in);
    CHECK(d.empty());
    CHECK(d.num_classes == 10);
  }
  {
    std::istringstream in(std::string(3072, '\0'), std::ios::binary);
    CHECK_THROWS_AS(parse_cifar10_binary(in), TruncatedRecordError);
  }
  {
    std::string data = make_record(3, 1, 2, 3);
    data += data.substr(0, 100);  // one whole record + a stub
    std::istringstream in(data, std::ios::binary);
    CHECK_THROWS_AS(parse_cifar10_binary(in), TruncatedRecordError);
  }
  {
    std::string data = make_record(10, 0, 0, 0);
    std::istringstream in(data, std::ios::binary);
    CHECK_THROWS_AS(parse_cifar10_binary(in), InvalidLabelError);
  }
}

TEST_CASE("cifar10 parse then serialize reproduces the bytes exactly") {
  std::string data = make_record(0, 1, 2, 3) + make_record(9, 255, 128, 0) +
                     make_record(5, 42, 42, 42);
  // give the middle record some structure
  data[1 + 17] = 77;
  data[1 + 1024 + 333] = 13;
  std::istringstream in(data, std::ios::binary);
  Dataset d = parse_cifar10_binary(in);
  REQUIRE(d.size() == 3);
  std::ostringstream out(std::ios::binary);
  serialize_cifar10_binary(d, out);
  CHECK(out.str() == data);
}

TEST_CASE("synth blobs are deterministic and shaped as requested") {
  Dataset a = synth_blobs(2, 5, 8, 8, 3, 200.0, 1);
  Dataset b = synth_blobs(2, 5, 8, 8, 3, 200.0, 1);
  REQUIRE(a.size() == 10);
  CHECK(a.num_classes == 2);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.samples[i].image == b.samples[i].image);
    CHECK(a.samples[i].label == b.samples[i].label);
    CHECK(a.samples[i].id == b.samples[i].id);
  }
  Dataset c = synth_blobs(2, 5, 8, 8, 3, 200.0, 2);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!(a.samples[i].image == c.samples[i].image)) any_diff = true;
  CHECK(any_diff);

  CHECK_THROWS_AS(synth_blobs(1, 5, 8, 8, 3, 1.0, 0), Error);
  CHECK_THROWS_AS(synth_blobs(2, 0, 8, 8, 3, 1.0, 0), Error);
}

TEST_CASE("zero separation collapses all class templates") {
  Dataset d = synth_blobs(2, 3, 4, 4, 1, 0.0, 9);
  // With separation 0 both class templates equal the all-128 image, so the
  // per-class sample means should not be distinguishable beyond noise.
  double mean0 = 0.0, mean1 = 0.0;
  int n0 = 0, n1 = 0;
  for (const auto& s : d.samples) {
    double m = 0.0;
    for (double v : s.image.pixels()) m += v;
    m /= s.image.size();
    if (s.label == 0) {
      mean0 += m;
      ++n0;
    } else {
      mean1 += m;
      ++n1;
    }
  }
  CHECK(std::abs(mean0 / n0 - mean1 / n1) < 25.0);
}

TEST_CASE("select_eval_samples is deterministic and honors the filter") {
  Dataset d = synth_blobs(2, 20, 4, 4, 1, 150.0, 3);
  // Predictor that alternates right/wrong predictions across the scan.
  std::vector<int> labels;
  for (const auto& s : d.samples) labels.push_back(s.label);
  // corrupt every fourth answer
  for (std::size_t i = 0; i < labels.size(); i += 4) labels[i] ^= 1;
  FixedLabelPredictor p(4, 4, 1, 2, labels);

  auto sel1 = select_eval_samples(d, p, 10, 42, true);
  auto sel2 = select_eval_samples(d, p, 10, 42, true);
  REQUIRE(sel1.size() == 10);
  for (std::size_t i = 0; i < sel1.size(); ++i)
    CHECK(sel1[i].id == sel2[i].id);
  // all selected ids belong to correctly classified positions
  for (const auto& s : sel1) CHECK(s.id % 4 != 0);

  auto none = select_eval_samples(d, p, 0, 1, true);
  CHECK(none.empty());

  CHECK_THROWS_AS(select_eval_samples(d, p, 31, 1, true),
                  InsufficientSamplesError);
}
