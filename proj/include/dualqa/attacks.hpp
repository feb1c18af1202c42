#ifndef DUALQA_ATTACKS_HPP
#define DUALQA_ATTACKS_HPP

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dualqa/dataset.hpp"
#include "dualqa/image.hpp"
#include "dualqa/optim.hpp"
#include "dualqa/predictor.hpp"
#include "dualqa/rng.hpp"

namespace dualqa {

enum class AttackNorm { L0, Linf };
enum class OptimizerKind { De, Cmaes };

inline const char* norm_name(AttackNorm n) {
  return n == AttackNorm::L0 ? "l0" : "linf";
}

inline const char* optimizer_name(OptimizerKind k) {
  return k == OptimizerKind::De ? "de" : "cmaes";
}

/// Attack configuration. The threshold is validated at construction: a
/// zero or negative threshold never reaches the optimizer. Budgets and
/// optimizer parameters default to the reference settings (L0: 40000
/// evaluations, DE NP 400; Linf: 39200 evaluations, DE NP = input size;
/// CMA-ES sigma 31.75 for L0 and th/4 for Linf); budget_scale shrinks the
/// evaluation budgets proportionally for desk-scale runs.
struct AttackSpec {
  AttackSpec(AttackNorm norm_, int th_) : norm(norm_), th(th_) {
    if (th < 1)
      throw Error("attack threshold must be >= 1, got " + std::to_string(th));
    if (norm == AttackNorm::Linf && th > 255)
      throw Error("linf threshold must be <= 255, got " + std::to_string(th));
  }

  AttackNorm norm;
  int th;
  OptimizerKind optimizer = OptimizerKind::Cmaes;
  double budget_scale = 1.0;
  std::optional<std::uint64_t> max_evaluations;  // overrides scaled default
  std::optional<int> de_np;
  int de_generations = 100;
  double de_cr = 1.0;
  double de_fweight = 0.5;
  std::optional<double> cmaes_sigma0;
  std::optional<int> cmaes_lambda;
  std::uint64_t seed = 0;

  std::uint64_t resolved_budget() const {
    if (max_evaluations) return *max_evaluations;
    double base = norm == AttackNorm::L0 ? 40000.0 : 39200.0;
    auto v = static_cast<std::uint64_t>(std::llround(base * budget_scale));
    return std::max<std::uint64_t>(v, 1);
  }
};

struct AttackOutcome {
  bool success = false;
  std::optional<Image> adversarial;  // present iff success
  int original_label = 0;
  int adversarial_label = 0;         // = original_label when unsuccessful
  double confidence_before = 0.0;    // true-class confidence on the original
  double confidence_after = 0.0;     // on the adversarial image, or best seen
  std::optional<NormQuad> distance;  // present iff success
  std::uint64_t evaluations_used = 0;
  std::uint64_t seed = 0;
};

/// Untargeted success: the predicted label moved off the true class.
inline bool success_criterion(const SoftPrediction& before,
                              const SoftPrediction& after, int true_class) {
  if (before.confidences.size() != after.confidences.size())
    throw ShapeMismatchError("success_criterion: prediction lengths differ");
  return after.label != true_class;
}

namespace detail {

inline int wrap_position(double g, int extent) {
  auto cell = static_cast<std::int64_t>(std::floor(g));
  std::int64_t m = cell % extent;
  if (m < 0) m += extent;
  return static_cast<int>(m);
}

}  // namespace detail

/// Few-pixel genome: th genes of (x, y, v_1..v_c). Positions take
/// floor-then-modulo; channel values clip to [0, 255]. Later genes win
/// pixel collisions. By construction at most th pixels differ from x.
inline Image decode_l0_genome(std::span<const double> genome, const Image& x,
                              int th) {
  const int c = x.channels();
  const std::size_t gene = static_cast<std::size_t>(2 + c);
  if (genome.size() != gene * static_cast<std::size_t>(th))
    throw ShapeMismatchError("l0 genome length " +
                             std::to_string(genome.size()) + " != (2+c)*th = " +
                             std::to_string(gene * th));
  std::vector<double> px = x.pixels();
  for (int g = 0; g < th; ++g) {
    const double* base = genome.data() + gene * static_cast<std::size_t>(g);
    int col = detail::wrap_position(base[0], x.width());
    int row = detail::wrap_position(base[1], x.height());
    for (int ch = 0; ch < c; ++ch)
      px[x.offset(row, col, ch)] = clip_pixel(base[2 + ch]);
  }
  return Image(x.height(), x.width(), x.channels(), std::move(px));
}

/// Threshold genome: one additive offset per channel value, bounded by
/// [-th, th]; the sum is clipped to [0, 255], so the L-inf distance to x
/// never exceeds th.
inline Image decode_linf_genome(std::span<const double> genome, const Image& x,
                                int th) {
  if (genome.size() != x.size())
    throw ShapeMismatchError("linf genome length " +
                             std::to_string(genome.size()) +
                             " != input size " + std::to_string(x.size()));
  const double bound = static_cast<double>(th);
  std::vector<double> px(x.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    double orig = x.pixels()[i];
    double d = std::clamp(genome[i], -bound, bound);
    double target = clip_pixel(orig + d);
    // Rounding in orig + d can push the measured deviation past th by an
    // ulp when d sits exactly on the bound; walk back so the constraint
    // holds exactly in double arithmetic.
    while (std::abs(target - orig) > bound)
      target = std::nextafter(target, orig);
    px[i] = target;
  }
  return Image(x.height(), x.width(), x.channels(), std::move(px));
}

namespace detail {

inline SearchSpace l0_search_space(const Image& x, int th,
                                   OptimizerKind optimizer) {
  const int c = x.channels();
  RepairPolicy value_policy = optimizer == OptimizerKind::Cmaes
                                  ? RepairPolicy::Clamp
                                  : RepairPolicy::RandomReset;
  SearchSpace s;
  const std::size_t dim = static_cast<std::size_t>(2 + c) * th;
  s.lower.reserve(dim);
  s.upper.reserve(dim);
  s.policy.reserve(dim);
  for (int g = 0; g < th; ++g) {
    s.lower.push_back(0.0);
    s.upper.push_back(static_cast<double>(x.width()));
    s.policy.push_back(RepairPolicy::Modulo);
    s.lower.push_back(0.0);
    s.upper.push_back(static_cast<double>(x.height()));
    s.policy.push_back(RepairPolicy::Modulo);
    for (int ch = 0; ch < c; ++ch) {
      s.lower.push_back(0.0);
      s.upper.push_back(255.0);
      s.policy.push_back(value_policy);
    }
  }
  return s;
}

inline SearchSpace linf_search_space(const Image& x, int th,
                                     OptimizerKind optimizer) {
  RepairPolicy value_policy = optimizer == OptimizerKind::Cmaes
                                  ? RepairPolicy::Clamp
                                  : RepairPolicy::RandomReset;
  return SearchSpace::uniform(x.size(), -static_cast<double>(th),
                              static_cast<double>(th), value_policy);
}

}  // namespace detail

/// Runs one attack: minimizes the true-class confidence g(x')_c over the
/// encoded search space, stopping at the first decoded candidate whose
/// label leaves the true class. The predictor is touched only through
/// predict. Deterministic for a fixed spec seed.
inline AttackOutcome attack(Predictor& p, const LabeledSample& sample,
                            const AttackSpec& spec) {
  const Image& x = sample.image;
  const int true_class = sample.label;
  if (true_class < 0 || true_class >= p.num_classes())
    throw Error("attack: sample label outside predictor classes");
  if (spec.norm == AttackNorm::L0 && spec.th > x.pixel_count())
    throw Error("attack: l0 threshold exceeds pixel count");

  AttackOutcome out;
  out.seed = spec.seed;

  SoftPrediction before = p.predict(x);
  out.original_label = before.label;
  out.adversarial_label = before.label;
  out.confidence_before = before.confidences[true_class];

  struct SearchState {
    bool found = false;
    std::optional<Image> image;
    SoftPrediction prediction;
  } state;

  auto decode = [&](std::span<const double> genome) {
    return spec.norm == AttackNorm::L0
               ? decode_l0_genome(genome, x, spec.th)
               : decode_linf_genome(genome, x, spec.th);
  };

  Objective objective = [&](std::span<const double> genome) {
    Image candidate = decode(genome);
    SoftPrediction pred = p.predict(candidate);
    if (!state.found && pred.label != true_class) {
      state.found = true;
      state.image = std::move(candidate);
      state.prediction = std::move(pred);
      return state.prediction.confidences[true_class];
    }
    return pred.confidences[true_class];
  };

  Budget budget;
  budget.max_evaluations = spec.resolved_budget();
  budget.early_stop = [&](double) { return state.found; };

  SearchSpace space = spec.norm == AttackNorm::L0
                          ? detail::l0_search_space(x, spec.th, spec.optimizer)
                          : detail::linf_search_space(x, spec.th, spec.optimizer);

  OptResult opt_result;
  if (spec.optimizer == OptimizerKind::De) {
    DeOptions de;
    int default_np = spec.norm == AttackNorm::L0
                         ? 400
                         : static_cast<int>(x.size());
    de.np = spec.de_np.value_or(static_cast<int>(std::min<std::uint64_t>(
        static_cast<std::uint64_t>(default_np), budget.max_evaluations)));
    de.generations = spec.de_generations;
    de.cr = spec.de_cr;
    de.fweight = spec.de_fweight;
    opt_result = de_minimize(objective, space, de, spec.seed, budget);
  } else {
    CmaesOptions cm;
    cm.sigma0 = spec.cmaes_sigma0.value_or(
        spec.norm == AttackNorm::L0 ? 31.75 : static_cast<double>(spec.th) / 4.0);
    cm.lambda = spec.cmaes_lambda;
    if (spec.norm == AttackNorm::Linf) {
      // Start from "no perturbation"; sigma = th/4 spreads the first
      // generation across a quarter of the feasible band.
      cm.initial_mean = std::vector<double>(x.size(), 0.0);
    }
    opt_result = cmaes_minimize(objective, space, cm, spec.seed, budget);
  }

  out.evaluations_used = opt_result.evaluations_used + 1;  // + base prediction
  out.confidence_after =
      state.found ? state.prediction.confidences[true_class]
                  : opt_result.best_value;
  if (state.found) {
    out.success = true;
    out.adversarial = std::move(state.image);
    out.adversarial_label = state.prediction.label;
    out.distance = norms(x, *out.adversarial);
  }
  return out;
}

}  // namespace dualqa

#endif  // DUALQA_ATTACKS_HPP
