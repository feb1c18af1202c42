#ifndef DUALQA_ASSESS_HPP
#define DUALQA_ASSESS_HPP

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "dualqa/attacks.hpp"
#include "dualqa/dataset.hpp"
#include "dualqa/predictor.hpp"

namespace dualqa {

struct AssessConfig {
  std::vector<int> levels = {1, 3, 5, 10};
  std::vector<AttackNorm> norms = {AttackNorm::L0, AttackNorm::Linf};
  OptimizerKind optimizer = OptimizerKind::Cmaes;
  double budget_scale = 1.0;
  std::optional<std::uint64_t> max_evaluations;
  std::optional<int> de_np;
  int de_generations = 100;
  double de_cr = 1.0;
  double de_fweight = 0.5;
  std::optional<double> cmaes_sigma0;
  std::optional<int> cmaes_lambda;
  std::uint64_t seed = 0;
  /// Reuse a success found at a smaller threshold for every larger one
  /// (the found perturbation stays feasible, so the accuracy curve is
  /// monotone by construction). Disable for independent re-runs per level.
  bool carry_successes = true;
  std::string model_id = "model";
};

enum class SampleStatus { Success, Failure, Errored };

struct SampleAttackRecord {
  std::int64_t sample_id = 0;
  int true_class = 0;
  SampleStatus status = SampleStatus::Failure;
  bool carried = false;        // success inherited from a smaller th
  int first_success_th = 0;    // valid when status == Success
  AttackOutcome outcome;       // valid unless errored
  std::string error;           // valid when errored
};

struct LevelResult {
  AttackNorm norm = AttackNorm::L0;
  int th = 0;
  int attacked = 0;   // denominator: samples minus errored
  int successes = 0;
  int errored = 0;
  double adversarial_accuracy = 0.0;
  std::optional<double> mean_l2;  // over successes; absent when none
  std::vector<SampleAttackRecord> records;  // input sample order
};

struct CurvePoint {
  int th = 0;
  double accuracy = 0.0;
};

/// Trapezoidal area under an accuracy-vs-threshold curve with possibly
/// non-uniform spacing. Thresholds must be strictly increasing and at
/// least two points are required.
inline double auc(std::span<const CurvePoint> curve) {
  if (curve.size() < 2)
    throw Error("auc: need at least 2 curve points");
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    if (curve[i].th <= curve[i - 1].th)
      throw Error("auc: thresholds must be strictly increasing");
    area += 0.5 * (curve[i].accuracy + curve[i - 1].accuracy) *
            (curve[i].th - curve[i - 1].th);
  }
  return area;
}

struct ClassRate {
  int attacked = 0;
  int successes = 0;
  double rate = 0.0;
};

/// Success rate per true class. Classes with no attacked samples are
/// absent from the map rather than reported as zero.
inline std::map<int, ClassRate> class_matrix(const LevelResult& level) {
  std::map<int, ClassRate> m;
  for (const auto& r : level.records) {
    if (r.status == SampleStatus::Errored) continue;
    auto& cr = m[r.true_class];
    ++cr.attacked;
    if (r.status == SampleStatus::Success) ++cr.successes;
  }
  for (auto& [cls, cr] : m)
    cr.rate = static_cast<double>(cr.successes) / cr.attacked;
  return m;
}

struct OverlapCounts {
  int both = 0;
  int only_l0 = 0;
  int only_linf = 0;
  int neither = 0;
  std::vector<std::int64_t> ids_both, ids_only_l0, ids_only_linf, ids_neither;
};

/// Partitions the common sample set by per-norm success. Errored samples
/// count as not-successful for the partition so the four buckets always
/// sum to the sample total.
inline OverlapCounts overlap(const std::vector<SampleAttackRecord>& l0_records,
                             const std::vector<SampleAttackRecord>& linf_records) {
  if (l0_records.size() != linf_records.size())
    throw Error("overlap: outcome lists cover different sample counts");
  std::map<std::int64_t, bool> l0_success;
  for (const auto& r : l0_records)
    l0_success[r.sample_id] = r.status == SampleStatus::Success;
  OverlapCounts oc;
  for (const auto& r : linf_records) {
    auto it = l0_success.find(r.sample_id);
    if (it == l0_success.end())
      throw Error("overlap: sample id " + std::to_string(r.sample_id) +
                  " missing from l0 outcomes");
    bool s_l0 = it->second;
    bool s_linf = r.status == SampleStatus::Success;
    if (s_l0 && s_linf) {
      ++oc.both;
      oc.ids_both.push_back(r.sample_id);
    } else if (s_l0) {
      ++oc.only_l0;
      oc.ids_only_l0.push_back(r.sample_id);
    } else if (s_linf) {
      ++oc.only_linf;
      oc.ids_only_linf.push_back(r.sample_id);
    } else {
      ++oc.neither;
      oc.ids_neither.push_back(r.sample_id);
    }
  }
  return oc;
}

struct RobustnessReport {
  std::string model_id;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::Cmaes;
  double budget_scale = 1.0;
  bool carry_successes = true;
  int num_samples = 0;
  std::vector<LevelResult> levels;  // norm-major, thresholds ascending
  std::map<AttackNorm, std::vector<CurvePoint>> curves;
  std::map<AttackNorm, double> auc_by_norm;  // only when curve has >= 2 points
  // norm -> th -> class -> rate; absent classes omitted.
  std::map<AttackNorm, std::map<int, std::map<int, ClassRate>>> class_matrices;
  std::map<int, OverlapCounts> overlap_by_th;  // filled when both norms ran
  std::vector<std::string> safety_labels;
  std::vector<std::int64_t> errored_ids;  // union over levels, sorted
};

namespace detail {

/// Distributes indices over one thread per pool entry. A single-entry pool
/// runs inline. Work items pull from an atomic counter; results land in
/// index-addressed slots so scheduling cannot change any output.
template <typename Fn>
void parallel_for(std::span<Predictor* const> pool, std::size_t count, Fn&& fn) {
  if (pool.size() <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(*pool[0], i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> threads;
  threads.reserve(pool.size());
  for (Predictor* p : pool)
    threads.emplace_back([&, p] {
      for (std::size_t i; (i = next.fetch_add(1)) < count;) fn(*p, i);
    });
  for (auto& t : threads) t.join();
}

inline std::uint64_t attack_seed(std::uint64_t base, AttackNorm norm, int th,
                                 std::int64_t sample_id) {
  return derive_seed(base, norm == AttackNorm::L0 ? 1 : 2,
                     static_cast<std::uint64_t>(th),
                     static_cast<std::uint64_t>(sample_id));
}

}  // namespace detail

/// Runs the dual assessment over pre-selected samples. `pool` holds one
/// predictor per worker thread, all equivalent views of the same model
/// (built-ins may repeat one pointer; external models need one subprocess
/// per worker). Deterministic in cfg.seed: per-sample attack seeds are
/// derived from (seed, norm, th, sample id), so neither worker count nor
/// scheduling affects the report.
inline RobustnessReport assess(std::span<Predictor* const> pool,
                               std::span<const LabeledSample> samples,
                               const AssessConfig& cfg) {
  if (pool.empty()) throw Error("assess: predictor pool is empty");
  if (cfg.levels.empty()) throw Error("assess: no threshold levels");
  for (std::size_t i = 1; i < cfg.levels.size(); ++i)
    if (cfg.levels[i] <= cfg.levels[i - 1])
      throw Error("assess: levels must be strictly increasing");

  RobustnessReport report;
  report.model_id = cfg.model_id;
  report.seed = cfg.seed;
  report.optimizer = cfg.optimizer;
  report.budget_scale = cfg.budget_scale;
  report.carry_successes = cfg.carry_successes;
  report.num_samples = static_cast<int>(samples.size());

  std::set<std::int64_t> errored_union;

  for (AttackNorm norm : cfg.norms) {
    // sample index -> record of the first success, for carrying forward
    std::map<std::size_t, SampleAttackRecord> carried;

    for (int th : cfg.levels) {
      std::vector<std::size_t> to_attack;
      for (std::size_t i = 0; i < samples.size(); ++i)
        if (!cfg.carry_successes || !carried.count(i)) to_attack.push_back(i);

      std::vector<SampleAttackRecord> fresh(to_attack.size());
      detail::parallel_for(
          pool, to_attack.size(), [&](Predictor& p, std::size_t slot) {
            const LabeledSample& sample = samples[to_attack[slot]];
            SampleAttackRecord rec;
            rec.sample_id = sample.id;
            rec.true_class = sample.label;
            AttackSpec spec(norm, th);
            spec.optimizer = cfg.optimizer;
            spec.budget_scale = cfg.budget_scale;
            spec.max_evaluations = cfg.max_evaluations;
            spec.de_np = cfg.de_np;
            spec.de_generations = cfg.de_generations;
            spec.de_cr = cfg.de_cr;
            spec.de_fweight = cfg.de_fweight;
            spec.cmaes_sigma0 = cfg.cmaes_sigma0;
            spec.cmaes_lambda = cfg.cmaes_lambda;
            spec.seed = detail::attack_seed(cfg.seed, norm, th, sample.id);
            try {
              rec.outcome = attack(p, sample, spec);
              if (rec.outcome.success) {
                rec.status = SampleStatus::Success;
                rec.first_success_th = th;
              } else {
                rec.status = SampleStatus::Failure;
              }
            } catch (const std::exception& e) {
              rec.status = SampleStatus::Errored;
              rec.error = e.what();
            }
            fresh[slot] = std::move(rec);
          });

      LevelResult level;
      level.norm = norm;
      level.th = th;
      level.records.reserve(samples.size());
      std::size_t fresh_pos = 0;
      double l2_sum = 0.0;
      for (std::size_t i = 0; i < samples.size(); ++i) {
        SampleAttackRecord rec;
        if (cfg.carry_successes && carried.count(i)) {
          rec = carried.at(i);
          rec.carried = true;
        } else {
          rec = fresh[fresh_pos++];
          if (cfg.carry_successes && rec.status == SampleStatus::Success)
            carried[i] = rec;
        }
        switch (rec.status) {
          case SampleStatus::Errored:
            ++level.errored;
            errored_union.insert(rec.sample_id);
            break;
          case SampleStatus::Success:
            ++level.successes;
            ++level.attacked;
            if (rec.outcome.distance) l2_sum += rec.outcome.distance->l2;
            break;
          case SampleStatus::Failure:
            ++level.attacked;
            break;
        }
        level.records.push_back(std::move(rec));
      }
      level.adversarial_accuracy =
          level.attacked > 0
              ? static_cast<double>(level.successes) / level.attacked
              : 0.0;
      if (level.successes > 0) level.mean_l2 = l2_sum / level.successes;

      report.curves[norm].push_back({th, level.adversarial_accuracy});
      report.class_matrices[norm][th] = class_matrix(level);
      if (level.adversarial_accuracy == 0.0)
        report.safety_labels.push_back(
            std::to_string(th) +
            (norm == AttackNorm::L0 ? "-pixel-safe" : "-threshold-safe"));
      report.levels.push_back(std::move(level));
    }
  }

  bool has_l0 = std::find(cfg.norms.begin(), cfg.norms.end(),
                          AttackNorm::L0) != cfg.norms.end();
  bool has_linf = std::find(cfg.norms.begin(), cfg.norms.end(),
                            AttackNorm::Linf) != cfg.norms.end();
  if (has_l0 && has_linf) {
    for (int th : cfg.levels) {
      const std::vector<SampleAttackRecord>* l0_recs = nullptr;
      const std::vector<SampleAttackRecord>* linf_recs = nullptr;
      for (const auto& lv : report.levels) {
        if (lv.th != th) continue;
        if (lv.norm == AttackNorm::L0) l0_recs = &lv.records;
        if (lv.norm == AttackNorm::Linf) linf_recs = &lv.records;
      }
      report.overlap_by_th[th] = overlap(*l0_recs, *linf_recs);
    }
  }

  for (auto& [norm, curve] : report.curves)
    if (curve.size() >= 2) report.auc_by_norm[norm] = auc(curve);

  report.errored_ids.assign(errored_union.begin(), errored_union.end());
  return report;
}

// -- transferability ---------------------------------------------------------

struct StoredSuccess {
  std::int64_t sample_id = 0;
  int true_class = 0;
  Image adversarial{1, 1, 1};
};

struct SourceOutcomes {
  std::string model_id;
  std::vector<StoredSuccess> successes;
};

struct TransferMatrix {
  std::vector<std::string> source_ids;  // rows
  std::vector<std::string> target_ids;  // columns
  std::vector<std::vector<double>> rates;
};

/// Evaluates stored adversarial images against each target: entry (s, t)
/// is the fraction of source-s successes whose target label leaves the
/// true class. No re-attack happens here.
inline TransferMatrix transfer(std::span<const SourceOutcomes> sources,
                               std::span<Predictor* const> targets,
                               std::span<const std::string> target_ids) {
  if (targets.size() != target_ids.size())
    throw Error("transfer: target id count mismatch");
  for (const auto& src : sources)
    if (src.successes.empty())
      throw Error("transfer: source " + src.model_id + " has no successes");

  TransferMatrix tm;
  for (const auto& src : sources) tm.source_ids.push_back(src.model_id);
  tm.target_ids.assign(target_ids.begin(), target_ids.end());

  for (const auto& src : sources) {
    std::vector<double> row;
    for (Predictor* target : targets) {
      int fooled = 0;
      for (const auto& s : src.successes) {
        if (s.adversarial.height() != target->input_height() ||
            s.adversarial.width() != target->input_width() ||
            s.adversarial.channels() != target->input_channels())
          throw ShapeMismatchError(
              "transfer: stored sample shape does not match target model");
        if (target->predict(s.adversarial).label != s.true_class) ++fooled;
      }
      row.push_back(static_cast<double>(fooled) /
                    static_cast<double>(src.successes.size()));
    }
    tm.rates.push_back(std::move(row));
  }
  return tm;
}

}  // namespace dualqa

#endif  // DUALQA_ASSESS_HPP
