#include <doctest.h>

#include <cmath>
#include <vector>

#include "dualqa/image.hpp"
#include "dualqa/png.hpp"
#include "dualqa/rng.hpp"

using namespace dualqa;

namespace {

Image random_image(int h, int w, int c, Rng& rng) {
  std::vector<double> px(static_cast<std::size_t>(h) * w * c);
  for (double& v : px) v = rng.uniform(0.0, 255.0);
  return Image(h, w, c, std::move(px));
}

}  // namespace

TEST_CASE("image construction validates shape and range") {
  CHECK_THROWS_AS(Image(0, 4, 3), ShapeMismatchError);
  CHECK_THROWS_AS(Image(4, 4, 2), ShapeMismatchError);
  CHECK_THROWS_AS(Image(2, 2, 1, std::vector<double>(3, 0.0)),
                  ShapeMismatchError);
  CHECK_THROWS_AS(Image(1, 1, 1, {256.0}), OutOfBoundsError);
  CHECK_THROWS_AS(Image(1, 1, 1, {-0.5}), OutOfBoundsError);
  Image ok(2, 3, 3);
  CHECK(ok.size() == 18);
  CHECK(ok.at(1, 2, 2) == 0.0);
}

TEST_CASE("norms of identical images are all zero") {
  Rng rng(7);
  Image a = random_image(5, 4, 3, rng);
  NormQuad q = norms(a, a);
  CHECK(q.l0_pixels == 0);
  CHECK(q.l1 == 0.0);
  CHECK(q.l2 == 0.0);
  CHECK(q.linf == 0.0);
}

TEST_CASE("norms of a single fully flipped pixel") {
  Image a(32, 32, 3);
  std::vector<double> px = a.pixels();
  for (int ch = 0; ch < 3; ++ch) px[a.offset(4, 9, ch)] = 255.0;
  Image b(32, 32, 3, px);
  NormQuad q = norms(a, b);
  CHECK(q.l0_pixels == 1);
  CHECK(q.l1 == doctest::Approx(765.0));
  CHECK(q.l2 == doctest::Approx(255.0 * std::sqrt(3.0)));
  CHECK(q.linf == 255.0);
}

TEST_CASE("norms of two pixels changed by +10 on one channel") {
  Image a(8, 8, 3);
  std::vector<double> px = a.pixels();
  px[a.offset(0, 0, 1)] = 10.0;
  px[a.offset(3, 5, 2)] = 10.0;
  Image b(8, 8, 3, px);
  NormQuad q = norms(a, b);
  CHECK(q.l0_pixels == 2);
  CHECK(q.l1 == doctest::Approx(20.0));
  CHECK(q.l2 == doctest::Approx(std::sqrt(200.0)));
  CHECK(q.linf == doctest::Approx(10.0));
}

TEST_CASE("norms rejects shape mismatch and is symmetric") {
  Rng rng(3);
  Image a = random_image(4, 4, 3, rng);
  Image b = random_image(4, 5, 3, rng);
  CHECK_THROWS_AS(norms(a, b), ShapeMismatchError);

  for (int trial = 0; trial < 20; ++trial) {
    Image x = random_image(6, 5, 3, rng);
    Image y = random_image(6, 5, 3, rng);
    NormQuad xy = norms(x, y);
    NormQuad yx = norms(y, x);
    CHECK(xy.l0_pixels == yx.l0_pixels);
    CHECK(xy.l1 == yx.l1);
    CHECK(xy.l2 == yx.l2);
    CHECK(xy.linf == yx.linf);
    // ordering over the flattened channel-value vector
    CHECK(xy.l1 >= xy.l2);
    CHECK(xy.l2 >= xy.linf);
  }
}

TEST_CASE("apply_perturbation clips, bounds-checks, and leaves x intact") {
  Image x(4, 4, 3);
  std::vector<PixelDelta> d{{2, 1, 0, 300.0}};
  Image y = apply_perturbation(x, d);
  CHECK(y.at(2, 1, 0) == 255.0);
  CHECK(x.at(2, 1, 0) == 0.0);
  CHECK(norms(x, y).l0_pixels == 1);

  std::vector<PixelDelta> oob{{4, 0, 0, 1.0}};
  CHECK_THROWS_AS(apply_perturbation(x, oob), OutOfBoundsError);
  std::vector<PixelDelta> oob_ch{{0, 0, 3, 1.0}};
  CHECK_THROWS_AS(apply_perturbation(x, oob_ch), OutOfBoundsError);

  std::vector<PixelDelta> empty;
  CHECK(apply_perturbation(x, empty) == x);
}

TEST_CASE("dense perturbation of +th on a mid-gray image") {
  const double th = 10.0;
  Image x(3, 3, 3, std::vector<double>(27, 128.0));
  std::vector<double> delta(27, th);
  Image y = apply_perturbation(x, std::span<const double>(delta));
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == 138.0);
  CHECK(norms(x, y).linf == doctest::Approx(th));

  std::vector<double> wrong(26, 0.0);
  CHECK_THROWS_AS(apply_perturbation(x, std::span<const double>(wrong)),
                  ShapeMismatchError);
}

namespace {

// Independent brute force over the counterexample's candidate family:
// every square block size x every integer step, feasibility checked via
// norms(). Returns (block size, step) of the best candidate.
std::pair<int, int> brute_force_block(const Image& x, double budget) {
  auto candidate = [&](int s, int step) {
    std::vector<double> px = x.pixels();
    for (int y = 0; y < s; ++y)
      for (int xx = 0; xx < s; ++xx)
        for (int ch = 0; ch < x.channels(); ++ch) {
          std::size_t i = x.offset(y, xx, ch);
          double extreme = px[i] < 127.5 ? 255.0 : 0.0;
          double dir = extreme > px[i] ? 1.0 : -1.0;
          px[i] += dir * std::min<double>(step, std::abs(extreme - px[i]));
        }
    return Image(x.height(), x.width(), x.channels(), std::move(px));
  };
  int best_s = 0, best_step = 0;
  for (int s = 1; s <= std::min(x.height(), x.width()); ++s)
    for (int step = 1; step <= 255; ++step) {
      Image cand = candidate(s, step);
      if (norms(x, cand).l2 > budget) continue;
      if (s > best_s || (s == best_s && step > best_step)) {
        best_s = s;
        best_step = step;
      }
    }
  return {best_s, best_step};
}

}  // namespace

TEST_CASE("concentrated counterexample errors when the budget is tiny") {
  Image x(8, 8, 3);
  CHECK_THROWS_AS(concentrated_counterexample(x, 0.5), BudgetTooSmallError);
  CHECK_THROWS_AS(concentrated_counterexample(x, -1.0), BudgetTooSmallError);
}

TEST_CASE("concentrated counterexample matches exhaustive block search") {
  Image zero(32, 32, 3);
  // Expected values frozen from the brute force below: budget 356 admits a
  // full-frame spread at step 6, the one-pixel-max budget admits step 7.
  {
    auto [s, step] = brute_force_block(zero, 356.0);
    CHECK(s == 32);
    CHECK(step == 6);
    Image got = concentrated_counterexample(zero, 356.0);
    NormQuad q = norms(zero, got);
    CHECK(q.l2 <= 356.0);
    CHECK(q.l0_pixels == static_cast<std::int64_t>(s) * s);
    CHECK(q.linf == doctest::Approx(step));
  }
  {
    double budget = 255.0 * std::sqrt(3.0);
    auto [s, step] = brute_force_block(zero, budget);
    Image got = concentrated_counterexample(zero, budget);
    NormQuad q = norms(zero, got);
    CHECK(q.l2 <= budget);
    CHECK(q.l0_pixels >= 1);
    CHECK(q.l0_pixels == static_cast<std::int64_t>(s) * s);
    CHECK(q.linf == doctest::Approx(step));
  }
  // Non-trivial content: the same agreement must hold on arbitrary images.
  Rng rng(11);
  Image noisy = random_image(8, 8, 3, rng);
  for (double budget : {40.0, 150.0, 600.0}) {
    auto [s, step] = brute_force_block(noisy, budget);
    Image got = concentrated_counterexample(noisy, budget);
    NormQuad q = norms(noisy, got);
    CHECK(q.l2 <= budget);
    CHECK(q.l0_pixels == static_cast<std::int64_t>(s) * s);
  }
}

TEST_CASE("png encoding produces a valid signature and round-trip scanlines") {
  Rng rng(5);
  Image img = random_image(9, 7, 3, rng);
  auto bytes = encode_png(img, "seed=5");
  REQUIRE(bytes.size() > 8);
  const unsigned char sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  for (int i = 0; i < 8; ++i) CHECK(bytes[i] == sig[i]);
  // IHDR immediately follows the signature.
  CHECK(bytes[12] == 'I');
  CHECK(bytes[13] == 'H');
  CHECK(bytes[14] == 'D');
  CHECK(bytes[15] == 'R');
  // grayscale images use color type 0
  Image gray(4, 4, 1);
  auto gbytes = encode_png(gray);
  CHECK(gbytes[8 + 4 + 4 + 4 + 4 + 1] == 0);  // color type byte in IHDR
}
