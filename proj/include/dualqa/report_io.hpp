#ifndef DUALQA_REPORT_IO_HPP
#define DUALQA_REPORT_IO_HPP

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dualqa/assess.hpp"
#include "dualqa/base64.hpp"
#include "dualqa/errors.hpp"
#include "dualqa/image.hpp"

namespace dualqa {

using ordered_json = nlohmann::ordered_json;

constexpr const char* kReportSchema = "dualqa-report/1";
constexpr const char* kOutcomesSchema = "dualqa-outcomes/1";

/// Writes content to a sibling temp file and renames it into place, so a
/// crash never leaves a half-written artifact.
inline void write_file_atomic(const std::filesystem::path& path,
                              const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open " + tmp.string() + " for writing");
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

}  // namespace detail

inline ordered_json report_to_json(const RobustnessReport& r) {
  ordered_json j;
  j["schema"] = kReportSchema;
  j["model_id"] = r.model_id;
  j["seed"] = r.seed;
  j["optimizer"] = optimizer_name(r.optimizer);
  j["budget_scale"] = r.budget_scale;
  j["carry_successes"] = r.carry_successes;
  j["num_samples"] = r.num_samples;

  j["levels"] = ordered_json::array();
  for (const auto& lv : r.levels) {
    ordered_json e;
    e["norm"] = norm_name(lv.norm);
    e["th"] = lv.th;
    e["attacked"] = lv.attacked;
    e["successes"] = lv.successes;
    e["errored"] = lv.errored;
    e["adversarial_accuracy"] = lv.adversarial_accuracy;
    if (lv.mean_l2)
      e["mean_l2"] = *lv.mean_l2;
    else
      e["mean_l2"] = nullptr;
    std::vector<std::int64_t> success_ids;
    for (const auto& rec : lv.records)
      if (rec.status == SampleStatus::Success)
        success_ids.push_back(rec.sample_id);
    std::sort(success_ids.begin(), success_ids.end());
    e["success_ids"] = success_ids;
    j["levels"].push_back(std::move(e));
  }

  j["curves"] = ordered_json::object();
  for (const auto& [norm, curve] : r.curves) {
    ordered_json pts = ordered_json::array();
    for (const auto& p : curve) pts.push_back({p.th, p.accuracy});
    j["curves"][norm_name(norm)] = std::move(pts);
  }

  j["auc"] = ordered_json::object();
  for (const auto& [norm, v] : r.auc_by_norm) j["auc"][norm_name(norm)] = v;

  j["class_matrix"] = ordered_json::object();
  for (const auto& [norm, by_th] : r.class_matrices) {
    ordered_json jn = ordered_json::object();
    for (const auto& [th, by_class] : by_th) {
      ordered_json jt = ordered_json::object();
      for (const auto& [cls, cr] : by_class) {
        jt[std::to_string(cls)] = {{"attacked", cr.attacked},
                                   {"successes", cr.successes},
                                   {"rate", cr.rate}};
      }
      jn[std::to_string(th)] = std::move(jt);
    }
    j["class_matrix"][norm_name(norm)] = std::move(jn);
  }

  j["overlap"] = ordered_json::object();
  for (const auto& [th, oc] : r.overlap_by_th) {
    ordered_json jo;
    jo["both"] = oc.both;
    jo["only_l0"] = oc.only_l0;
    jo["only_linf"] = oc.only_linf;
    jo["neither"] = oc.neither;
    jo["ids_both"] = oc.ids_both;
    jo["ids_only_l0"] = oc.ids_only_l0;
    jo["ids_only_linf"] = oc.ids_only_linf;
    jo["ids_neither"] = oc.ids_neither;
    j["overlap"][std::to_string(th)] = std::move(jo);
  }

  j["safety_labels"] = r.safety_labels;
  j["errored_ids"] = r.errored_ids;
  return j;
}

inline std::string levels_csv(const RobustnessReport& r) {
  std::string out = "# seed=" + std::to_string(r.seed) + "\n";
  out += "norm,th,attacked,successes,errored,adversarial_accuracy,mean_l2\n";
  for (const auto& lv : r.levels) {
    out += norm_name(lv.norm);
    out += "," + std::to_string(lv.th);
    out += "," + std::to_string(lv.attacked);
    out += "," + std::to_string(lv.successes);
    out += "," + std::to_string(lv.errored);
    out += "," + detail::fmt_double(lv.adversarial_accuracy);
    out += ",";
    if (lv.mean_l2) out += detail::fmt_double(*lv.mean_l2);
    out += "\n";
  }
  return out;
}

inline std::string class_matrix_csv(const RobustnessReport& r) {
  std::string out = "# seed=" + std::to_string(r.seed) + "\n";
  out += "norm,th,class,attacked,successes,rate\n";
  for (const auto& [norm, by_th] : r.class_matrices)
    for (const auto& [th, by_class] : by_th)
      for (const auto& [cls, cr] : by_class) {
        out += norm_name(norm);
        out += "," + std::to_string(th);
        out += "," + std::to_string(cls);
        out += "," + std::to_string(cr.attacked);
        out += "," + std::to_string(cr.successes);
        out += "," + detail::fmt_double(cr.rate) + "\n";
      }
  return out;
}

inline std::string overlap_csv(const RobustnessReport& r) {
  std::string out = "# seed=" + std::to_string(r.seed) + "\n";
  out += "th,both,only_l0,only_linf,neither\n";
  for (const auto& [th, oc] : r.overlap_by_th)
    out += std::to_string(th) + "," + std::to_string(oc.both) + "," +
           std::to_string(oc.only_l0) + "," + std::to_string(oc.only_linf) +
           "," + std::to_string(oc.neither) + "\n";
  return out;
}

inline std::string transfer_csv(const TransferMatrix& tm,
                                std::uint64_t seed) {
  std::string out = "# seed=" + std::to_string(seed) + "\n";
  out += "source";
  for (const auto& t : tm.target_ids) out += "," + t;
  out += "\n";
  for (std::size_t i = 0; i < tm.source_ids.size(); ++i) {
    out += tm.source_ids[i];
    for (double v : tm.rates[i]) out += "," + detail::fmt_double(v);
    out += "\n";
  }
  return out;
}

inline ordered_json transfer_to_json(const TransferMatrix& tm,
                                     std::uint64_t seed) {
  ordered_json j;
  j["schema"] = "dualqa-transfer/1";
  j["seed"] = seed;
  j["sources"] = tm.source_ids;
  j["targets"] = tm.target_ids;
  j["rates"] = tm.rates;
  return j;
}

/// Minimal line chart of one accuracy-vs-threshold curve.
inline std::string curve_svg(const RobustnessReport& r, AttackNorm norm) {
  auto it = r.curves.find(norm);
  if (it == r.curves.end() || it->second.empty())
    throw Error("curve_svg: no curve for requested norm");
  const auto& curve = it->second;

  const double width = 480, height = 320;
  const double ml = 50, mr = 15, mt = 20, mb = 40;
  const double pw = width - ml - mr, ph = height - mt - mb;
  const double th_min = curve.front().th, th_max = curve.back().th;
  const double span = th_max > th_min ? th_max - th_min : 1.0;

  auto px = [&](double th) { return ml + (th - th_min) / span * pw; };
  auto py = [&](double acc) { return mt + (1.0 - acc) * ph; };

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"320\">\n";
  s += "<!-- seed=" + std::to_string(r.seed) + " -->\n";
  s += "<rect width=\"480\" height=\"320\" fill=\"white\"/>\n";
  // axes
  s += "<line x1=\"" + detail::fmt_double(ml) + "\" y1=\"" +
       detail::fmt_double(mt) + "\" x2=\"" + detail::fmt_double(ml) +
       "\" y2=\"" + detail::fmt_double(mt + ph) +
       "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + detail::fmt_double(ml) + "\" y1=\"" +
       detail::fmt_double(mt + ph) + "\" x2=\"" + detail::fmt_double(ml + pw) +
       "\" y2=\"" + detail::fmt_double(mt + ph) + "\" stroke=\"black\"/>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    double acc = tick / 4.0;
    s += "<text x=\"" + detail::fmt_double(ml - 8) + "\" y=\"" +
         detail::fmt_double(py(acc) + 4) +
         "\" font-size=\"11\" text-anchor=\"end\">" +
         detail::fmt_double(acc) + "</text>\n";
  }
  std::string pts;
  for (const auto& p : curve) {
    pts += detail::fmt_double(px(p.th)) + "," + detail::fmt_double(py(p.accuracy)) + " ";
    s += "<circle cx=\"" + detail::fmt_double(px(p.th)) + "\" cy=\"" +
         detail::fmt_double(py(p.accuracy)) + "\" r=\"3\" fill=\"#d62728\"/>\n";
    s += "<text x=\"" + detail::fmt_double(px(p.th)) + "\" y=\"" +
         detail::fmt_double(mt + ph + 16) +
         "\" font-size=\"11\" text-anchor=\"middle\">" + std::to_string(p.th) +
         "</text>\n";
  }
  s += "<polyline points=\"" + pts +
       "\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"1.5\"/>\n";
  s += "<text x=\"" + detail::fmt_double(ml + pw / 2) + "\" y=\"" +
       detail::fmt_double(height - 8) +
       "\" font-size=\"12\" text-anchor=\"middle\">threshold (" +
       std::string(norm_name(norm)) + ")</text>\n";
  s += "<text x=\"12\" y=\"" + detail::fmt_double(mt + ph / 2) +
       "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 12 " +
       detail::fmt_double(mt + ph / 2) +
       ")\">adversarial accuracy</text>\n";
  s += "</svg>\n";
  return s;
}

// -- stored outcomes (transfer input) ----------------------------------------

struct StoredOutcome {
  std::int64_t sample_id = 0;
  int true_class = 0;
  int th = 0;  // smallest threshold at which the attack succeeded
  Image adversarial{1, 1, 1};
};

struct OutcomesFile {
  std::string model_id;
  std::uint64_t seed = 0;
  int height = 0, width = 0, channels = 0, num_classes = 0;
  std::map<AttackNorm, std::vector<StoredOutcome>> successes;
};

namespace detail {

inline std::string encode_pixels_f64(const Image& img) {
  std::vector<unsigned char> bytes(img.size() * 8);
  for (std::size_t i = 0; i < img.size(); ++i) {
    std::uint64_t bits;
    double v = img.pixels()[i];
    std::memcpy(&bits, &v, 8);
    for (int b = 0; b < 8; ++b)
      bytes[i * 8 + b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xff);
  }
  return base64_encode(bytes);
}

inline Image decode_pixels_f64(const std::string& b64, int h, int w, int c) {
  auto bytes = base64_decode(b64);
  std::size_t k = static_cast<std::size_t>(h) * w * c;
  if (bytes.size() != k * 8)
    throw Error("outcomes file: pixel payload has wrong length");
  std::vector<double> px(k);
  for (std::size_t i = 0; i < k; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b)
      bits |= static_cast<std::uint64_t>(bytes[i * 8 + b]) << (8 * b);
    std::memcpy(&px[i], &bits, 8);
  }
  return Image(h, w, c, std::move(px));
}

}  // namespace detail

/// Collects the first-success adversarial image per (norm, sample) from a
/// report. Shape and class count come from the attacked model.
inline OutcomesFile outcomes_from_report(const RobustnessReport& r, int height,
                                         int width, int channels,
                                         int num_classes) {
  OutcomesFile f;
  f.model_id = r.model_id;
  f.seed = r.seed;
  f.height = height;
  f.width = width;
  f.channels = channels;
  f.num_classes = num_classes;
  for (const auto& lv : r.levels)
    for (const auto& rec : lv.records) {
      if (rec.status != SampleStatus::Success || rec.carried) continue;
      if (!rec.outcome.adversarial) continue;
      f.successes[lv.norm].push_back(
          {rec.sample_id, rec.true_class, rec.first_success_th,
           *rec.outcome.adversarial});
    }
  return f;
}

inline ordered_json outcomes_to_json(const OutcomesFile& f) {
  ordered_json j;
  j["schema"] = kOutcomesSchema;
  j["model_id"] = f.model_id;
  j["seed"] = f.seed;
  j["shape"] = {f.height, f.width, f.channels};
  j["num_classes"] = f.num_classes;
  j["norms"] = ordered_json::object();
  for (const auto& [norm, outs] : f.successes) {
    ordered_json arr = ordered_json::array();
    for (const auto& o : outs) {
      ordered_json e;
      e["sample_id"] = o.sample_id;
      e["true_class"] = o.true_class;
      e["th"] = o.th;
      e["adv_pixels"] = detail::encode_pixels_f64(o.adversarial);
      arr.push_back(std::move(e));
    }
    j["norms"][norm_name(norm)] = std::move(arr);
  }
  return j;
}

inline OutcomesFile outcomes_from_json(const ordered_json& j) {
  if (!j.is_object() || j.value("schema", "") != kOutcomesSchema)
    throw Error("outcomes file: missing or unknown schema id");
  OutcomesFile f;
  f.model_id = j.at("model_id").get<std::string>();
  f.seed = j.at("seed").get<std::uint64_t>();
  auto shape = j.at("shape");
  f.height = shape.at(0).get<int>();
  f.width = shape.at(1).get<int>();
  f.channels = shape.at(2).get<int>();
  f.num_classes = j.at("num_classes").get<int>();
  for (const auto& [key, arr] : j.at("norms").items()) {
    AttackNorm norm;
    if (key == "l0")
      norm = AttackNorm::L0;
    else if (key == "linf")
      norm = AttackNorm::Linf;
    else
      throw Error("outcomes file: unknown norm key " + key);
    for (const auto& e : arr) {
      StoredOutcome o;
      o.sample_id = e.at("sample_id").get<std::int64_t>();
      o.true_class = e.at("true_class").get<int>();
      o.th = e.at("th").get<int>();
      o.adversarial = detail::decode_pixels_f64(
          e.at("adv_pixels").get<std::string>(), f.height, f.width, f.channels);
      f.successes[norm].push_back(std::move(o));
    }
  }
  return f;
}

inline OutcomesFile load_outcomes(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  ordered_json j = ordered_json::parse(in, nullptr, false);
  if (j.is_discarded())
    throw Error("outcomes file " + path.string() + " is not valid JSON");
  return outcomes_from_json(j);
}

/// Flattens one outcomes file into a transfer source, optionally
/// restricted to a single norm. Images found under both norms enter as
/// separate probes.
inline SourceOutcomes
source_from_outcomes(const OutcomesFile& f,
                     std::optional<AttackNorm> norm = std::nullopt) {
  SourceOutcomes src;
  src.model_id = f.model_id;
  for (const auto& [n, outs] : f.successes) {
    if (norm && n != *norm) continue;
    for (const auto& o : outs)
      src.successes.push_back({o.sample_id, o.true_class, o.adversarial});
  }
  return src;
}

}  // namespace dualqa

#endif  // DUALQA_REPORT_IO_HPP
