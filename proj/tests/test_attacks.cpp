#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "dualqa/attacks.hpp"
#include "dualqa/dataset.hpp"
#include "dualqa/predictor.hpp"
#include "dualqa/rng.hpp"

using namespace dualqa;

namespace {

Image random_image(int h, int w, int c, Rng& rng) {
  std::vector<double> px(static_cast<std::size_t>(h) * w * c);
  for (double& v : px) v = rng.uniform(0.0, 255.0);
  return Image(h, w, c, std::move(px));
}

/// Forwards to an inner predictor while checking the norm bound of every
/// candidate the attack evaluates (the first call is the unperturbed
/// original). This is the black-box discipline double: attacks can only
/// reach the model through this predict surface.
class ConstraintSpy final : public Predictor {
 public:
  ConstraintSpy(Predictor& inner, const Image& original, AttackNorm norm,
                int th)
      : inner_(inner), original_(original), norm_(norm), th_(th) {}

  int num_classes() const override { return inner_.num_classes(); }
  int input_height() const override { return inner_.input_height(); }
  int input_width() const override { return inner_.input_width(); }
  int input_channels() const override { return inner_.input_channels(); }

  std::uint64_t candidates_checked = 0;
  bool violated = false;

 protected:
  SoftPrediction do_predict(const Image& x) const override {
    NormQuad q = norms(original_, x);
    auto* self = const_cast<ConstraintSpy*>(this);
    ++self->candidates_checked;
    if (norm_ == AttackNorm::L0 && q.l0_pixels > th_) self->violated = true;
    if (norm_ == AttackNorm::Linf && q.linf > static_cast<double>(th_))
      self->violated = true;
    return inner_.predict(x);
  }

 private:
  Predictor& inner_;
  const Image& original_;
  AttackNorm norm_;
  int th_;
};

// 2-class linear model with a fixed weight-difference direction.
LinearSoftmax make_two_class_linear(int h, int w, int c, Rng& rng,
                                    double scale = 0.002) {
  LinearSoftmax m(h, w, c, 2);
  std::size_t k = m.input_dim();
  for (std::size_t i = 0; i < k; ++i) {
    m.weights()[i] = scale * rng.normal();
    m.weights()[k + i] = scale * rng.normal();
  }
  return m;
}

// Closed-form feasibility of misclassifying a 2-class linear model under
// an L-inf budget, accounting for the [0, 255] clip.
bool linf_feasible(const LinearSoftmax& m, const Image& x, int true_class,
                   int th) {
  int other = 1 - true_class;
  std::size_t k = m.input_dim();
  const double* wt = m.weights().data() + true_class * k;
  const double* wo = m.weights().data() + other * k;
  double margin = m.bias()[true_class] - m.bias()[other];
  double reduce = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    double d = wt[i] - wo[i];
    margin += d * x.pixels()[i];
    double down = std::min<double>(th, x.pixels()[i]);        // lower x_i
    double up = std::min<double>(th, 255.0 - x.pixels()[i]);  // raise x_i
    reduce += d > 0.0 ? d * down : -d * up;
  }
  double best = margin - reduce;
  if (best < 0.0) return true;
  return best == 0.0 && other < true_class;  // argmax tie-break
}

// Exhaustive one-pixel oracle on a single-channel image: every position
// times both extreme values.
bool one_pixel_feasible(Predictor& m, const Image& x, int true_class) {
  for (int y = 0; y < x.height(); ++y)
    for (int xx = 0; xx < x.width(); ++xx)
      for (double v : {0.0, 255.0}) {
        std::vector<double> px = x.pixels();
        px[x.offset(y, xx, 0)] = v;
        Image cand(x.height(), x.width(), x.channels(), std::move(px));
        if (m.predict(cand).label != true_class) return true;
      }
  return false;
}

}  // namespace

TEST_CASE("attack spec rejects invalid thresholds at construction") {
  CHECK_THROWS_AS(AttackSpec(AttackNorm::L0, 0), Error);
  CHECK_THROWS_AS(AttackSpec(AttackNorm::Linf, -3), Error);
  CHECK_THROWS_AS(AttackSpec(AttackNorm::Linf, 256), Error);
  AttackSpec ok(AttackNorm::Linf, 255);
  CHECK(ok.th == 255);
  CHECK(AttackSpec(AttackNorm::L0, 1).resolved_budget() == 40000);
  CHECK(AttackSpec(AttackNorm::Linf, 1).resolved_budget() == 39200);
  AttackSpec scaled(AttackNorm::L0, 1);
  scaled.budget_scale = 0.05;
  CHECK(scaled.resolved_budget() == 2000);
}

TEST_CASE("l0 genome decoding: clip, modulo, untouched remainder") {
  Image x(8, 8, 3);
  std::vector<double> genome = {5.3, 2.9, 300.0, -10.0, 128.0};
  Image y = decode_l0_genome(genome, x, 1);
  CHECK(y.at(2, 5, 0) == 255.0);
  CHECK(y.at(2, 5, 1) == 0.0);
  CHECK(y.at(2, 5, 2) == 128.0);
  CHECK(norms(x, y).l0_pixels == 1);

  std::vector<double> wrapped = {9.0, 9.0, 10.0, 10.0, 10.0};
  Image z = decode_l0_genome(wrapped, x, 1);
  CHECK(z.at(1, 1, 0) == 10.0);

  std::vector<double> negative = {-0.5, -8.5, 7.0, 7.0, 7.0};
  Image n = decode_l0_genome(negative, x, 1);
  // floor(-0.5) = -1 -> column 7; floor(-8.5) = -9 -> row 7
  CHECK(n.at(7, 7, 0) == 7.0);

  CHECK_THROWS_AS(decode_l0_genome(std::vector<double>(4, 0.0), x, 1),
                  ShapeMismatchError);
}

TEST_CASE("l0 genome collisions keep the pixel count within threshold") {
  Image x(8, 8, 3);
  std::vector<double> genome = {3.0, 4.0, 200.0, 0.0, 0.0,
                                3.0, 4.0, 0.0,   0.0, 99.0};
  Image y = decode_l0_genome(genome, x, 2);
  NormQuad q = norms(x, y);
  CHECK(q.l0_pixels <= 1);
  // later gene wins
  CHECK(y.at(4, 3, 0) == 0.0);
  CHECK(y.at(4, 3, 2) == 99.0);
}

TEST_CASE("linf genome decoding clips and bounds the deviation") {
  Image zero_genome_target(5, 5, 3, std::vector<double>(75, 37.0));
  std::vector<double> zeros(75, 0.0);
  CHECK(decode_linf_genome(zeros, zero_genome_target, 4) ==
        zero_genome_target);

  Image mid(5, 5, 3, std::vector<double>(75, 128.0));
  std::vector<double> plus(75, 3.0);
  Image shifted = decode_linf_genome(plus, mid, 3);
  for (std::size_t i = 0; i < shifted.size(); ++i) CHECK(shifted[i] == 131.0);
  CHECK(norms(mid, shifted).linf == 3.0);

  Image top(5, 5, 3, std::vector<double>(75, 255.0));
  CHECK(decode_linf_genome(plus, top, 3) == top);

  // out-of-bound genome entries are clamped before application
  std::vector<double> wild(75, 1000.0);
  Image w = decode_linf_genome(wild, mid, 5);
  CHECK(norms(mid, w).linf <= 5.0);

  CHECK_THROWS_AS(decode_linf_genome(zeros, Image(5, 5, 1), 3),
                  ShapeMismatchError);
}

TEST_CASE("linf deviation stays within th exactly even at the float edge") {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    Image x = random_image(3, 3, 3, rng);
    int th = 1 + static_cast<int>(rng.index(10));
    std::vector<double> genome(x.size());
    for (double& g : genome) {
      double r = rng.uniform01();
      // bias mass onto the exact bounds, where rounding bites
      g = r < 0.4 ? th : (r < 0.8 ? -th : rng.uniform(-2.0 * th, 2.0 * th));
    }
    Image y = decode_linf_genome(genome, x, th);
    CHECK(norms(x, y).linf <= static_cast<double>(th));
  }
}

TEST_CASE("success criterion is pure label comparison") {
  auto before = make_soft_prediction({0.8, 0.2});
  CHECK_FALSE(success_criterion(before, make_soft_prediction({0.7, 0.3}), 0));
  CHECK(success_criterion(before, make_soft_prediction({0.3, 0.7}), 0));
  // exact tie resolves to class 0; true class 0 means no success
  CHECK_FALSE(success_criterion(before, make_soft_prediction({0.5, 0.5}), 0));
  CHECK(success_criterion(before, make_soft_prediction({0.5, 0.5}), 1));
  CHECK_THROWS_AS(
      success_criterion(before, make_soft_prediction({0.5, 0.3, 0.2}), 0),
      ShapeMismatchError);
}

TEST_CASE("constraint soundness holds for every candidate during search") {
  Rng rng(21);
  for (OptimizerKind optimizer : {OptimizerKind::Cmaes, OptimizerKind::De}) {
    for (AttackNorm norm : {AttackNorm::L0, AttackNorm::Linf}) {
      LinearSoftmax model = make_two_class_linear(6, 6, 3, rng);
      Image x = random_image(6, 6, 3, rng);
      int label = model.predict(x).label;
      ConstraintSpy spy(model, x, norm, 3);
      AttackSpec spec(norm, 3);
      spec.optimizer = optimizer;
      spec.max_evaluations = 400;
      spec.de_np = 20;
      spec.seed = rng.next_u64();
      LabeledSample sample{x, label, 1};
      AttackOutcome out = attack(spy, sample, spec);
      CHECK_FALSE(spy.violated);
      CHECK(spy.candidates_checked == out.evaluations_used);
      if (out.success) {
        REQUIRE(out.distance.has_value());
        if (norm == AttackNorm::L0) CHECK(out.distance->l0_pixels <= 3);
        if (norm == AttackNorm::Linf) CHECK(out.distance->linf <= 3.0);
        CHECK(out.adversarial_label != label);
      }
    }
  }
}

TEST_CASE("attack evaluation accounting matches the predictor counter") {
  Rng rng(23);
  LinearSoftmax model = make_two_class_linear(4, 4, 3, rng);
  Image x = random_image(4, 4, 3, rng);
  int label = model.predict(x).label;
  std::uint64_t before = model.evaluations();

  AttackSpec spec(AttackNorm::Linf, 2);
  spec.max_evaluations = 300;
  spec.seed = 5;
  LabeledSample sample{x, label, 7};
  AttackOutcome out = attack(model, sample, spec);
  std::uint64_t used = model.evaluations() - before;
  CHECK(used == out.evaluations_used);
  // budget + one final-generation overshoot + the baseline prediction
  int lambda = 4 + static_cast<int>(std::floor(3.0 * std::log(48.0)));
  CHECK(used <= 300 + static_cast<std::uint64_t>(lambda) + 1);
}

TEST_CASE("attacks are deterministic for a fixed seed") {
  Rng rng(29);
  LinearSoftmax model = make_two_class_linear(4, 4, 1, rng);
  Image x = random_image(4, 4, 1, rng);
  int label = model.predict(x).label;
  LabeledSample sample{x, label, 3};

  for (AttackNorm norm : {AttackNorm::L0, AttackNorm::Linf}) {
    AttackSpec spec(norm, 2);
    spec.max_evaluations = 500;
    spec.seed = 1234;
    AttackOutcome a = attack(model, sample, spec);
    AttackOutcome b = attack(model, sample, spec);
    CHECK(a.success == b.success);
    CHECK(a.evaluations_used == b.evaluations_used);
    CHECK(a.confidence_after == b.confidence_after);
    if (a.success) {
      REQUIRE(b.success);
      CHECK(*a.adversarial == *b.adversarial);
    }
  }
}

TEST_CASE("linf attack agrees with the closed-form linear feasibility oracle") {
  Rng rng(31);
  LinearSoftmax model = make_two_class_linear(4, 4, 1, rng, 0.01);

  int checked = 0, feasible_hits = 0, feasible_total = 0, infeasible_total = 0;
  for (int i = 0; i < 30; ++i) {
    Image x = random_image(4, 4, 1, rng);
    int label = model.predict(x).label;  // attack what the model says
    LabeledSample sample{x, label, i};
    for (int th : {1, 4, 16}) {
      bool feasible = linf_feasible(model, x, label, th);
      AttackSpec spec(AttackNorm::Linf, th);
      spec.max_evaluations = 1200;
      spec.seed = derive_seed(7, th, i);
      AttackOutcome out = attack(model, sample, spec);
      ++checked;
      if (!feasible) {
        // constraint soundness + linear decision rule: success impossible
        ++infeasible_total;
        CHECK_FALSE(out.success);
      } else {
        ++feasible_total;
        if (out.success) ++feasible_hits;
      }
    }
  }
  REQUIRE(checked == 90);
  REQUIRE(feasible_total >= 10);
  REQUIRE(infeasible_total >= 10);
  CHECK(static_cast<double>(feasible_hits) / feasible_total >= 0.95);
}

TEST_CASE("l0 attack at th=1 agrees with the exhaustive one-pixel oracle") {
  Rng rng(37);
  LinearSoftmax model = make_two_class_linear(4, 4, 1, rng, 0.01);

  int feasible_total = 0, feasible_hits = 0, infeasible_total = 0;
  for (int i = 0; i < 20; ++i) {
    Image x = random_image(4, 4, 1, rng);
    int label = model.predict(x).label;
    bool feasible = one_pixel_feasible(model, x, label);
    AttackSpec spec(AttackNorm::L0, 1);
    spec.max_evaluations = 800;
    spec.seed = derive_seed(11, 0, i);
    LabeledSample sample{x, label, i};
    AttackOutcome out = attack(model, sample, spec);
    if (out.success) {
      REQUIRE(out.distance.has_value());
      CHECK(out.distance->l0_pixels <= 1);
    }
    if (feasible) {
      ++feasible_total;
      if (out.success) ++feasible_hits;
    } else {
      ++infeasible_total;
      CHECK_FALSE(out.success);
    }
  }
  REQUIRE(feasible_total >= 5);
  REQUIRE(infeasible_total >= 5);
  CHECK(static_cast<double>(feasible_hits) / feasible_total >= 0.9);
}

TEST_CASE("attack rejects an l0 threshold above the pixel count") {
  Rng rng(41);
  LinearSoftmax model = make_two_class_linear(2, 2, 1, rng);
  Image x = random_image(2, 2, 1, rng);
  AttackSpec spec(AttackNorm::L0, 5);
  spec.max_evaluations = 100;
  LabeledSample sample{x, 0, 0};
  CHECK_THROWS_AS(attack(model, sample, spec), Error);
}
