#ifndef DUALQA_TRAIN_HPP
#define DUALQA_TRAIN_HPP

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "dualqa/dataset.hpp"
#include "dualqa/predictor.hpp"
#include "dualqa/rng.hpp"

namespace dualqa {

enum class ModelKind { Linear, Mlp };

struct TrainOptions {
  int epochs = 50;
  double lr = 0.5;
  int batch_size = 32;
  double test_fraction = 0.2;
  int hidden = 32;  // mlp only
  std::uint64_t seed = 0;
};

struct TrainResult {
  std::unique_ptr<Predictor> model;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  int epochs = 0;
  std::uint64_t seed = 0;
};

namespace detail {

// Training works on inputs scaled to [0, 1]; the 1/255 factor is folded
// into the first-layer weights afterwards so the stored model accepts
// [0, 255] images.
struct TrainMatrix {
  std::vector<std::vector<double>> x;  // scaled inputs
  std::vector<int> y;
};

inline double accuracy_on(Predictor& p, const Dataset& d,
                          const std::vector<std::size_t>& idx) {
  if (idx.empty()) return 0.0;
  int hits = 0;
  for (std::size_t i : idx)
    if (p.predict(d.samples[i].image).label == d.samples[i].label) ++hits;
  return static_cast<double>(hits) / static_cast<double>(idx.size());
}

}  // namespace detail

/// Mini-batch gradient descent on the softmax cross-entropy, with
/// analytically derived gradients for both built-in models. Deterministic
/// for a fixed seed. Throws DivergenceError naming the epoch if the loss
/// goes non-finite.
inline TrainResult train(ModelKind kind, const Dataset& d,
                         const TrainOptions& opt) {
  if (d.empty()) throw Error("train: dataset is empty");
  if (!(opt.lr > 0.0)) throw Error("train: learning rate must be positive");
  if (opt.epochs < 0) throw Error("train: epochs must be >= 0");

  const int h = d.samples.front().image.height();
  const int w = d.samples.front().image.width();
  const int c = d.samples.front().image.channels();
  const std::size_t k = d.samples.front().image.size();
  const int classes = d.num_classes;
  const int hidden = opt.hidden;

  Rng rng(derive_seed(opt.seed, 0x74726169));  // "trai"

  // Deterministic train/test split.
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  auto n_test = static_cast<std::size_t>(
      std::floor(opt.test_fraction * static_cast<double>(d.size())));
  if (n_test >= d.size()) n_test = d.size() - 1;
  std::vector<std::size_t> test_idx(order.begin(),
                                    order.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_test),
                                     order.end());

  detail::TrainMatrix tm;
  tm.x.reserve(train_idx.size());
  tm.y.reserve(train_idx.size());
  for (std::size_t i : train_idx) {
    std::vector<double> u(k);
    for (std::size_t j = 0; j < k; ++j)
      u[j] = d.samples[i].image.pixels()[j] / 255.0;
    tm.x.push_back(std::move(u));
    tm.y.push_back(d.samples[i].label);
  }

  // Parameters in [0,1]-input scale.
  const bool is_mlp = kind == ModelKind::Mlp;
  const std::size_t in_rows = is_mlp ? static_cast<std::size_t>(hidden) : classes;
  std::vector<double> w1(in_rows * k), b1(in_rows, 0.0);
  std::vector<double> w2, b2;
  double init1 = 0.5 / std::sqrt(static_cast<double>(k));
  for (double& v : w1) v = init1 * rng.normal();
  if (is_mlp) {
    w2.assign(static_cast<std::size_t>(classes) * hidden, 0.0);
    b2.assign(classes, 0.0);
    double init2 = 0.5 / std::sqrt(static_cast<double>(hidden));
    for (double& v : w2) v = init2 * rng.normal();
  }

  std::vector<double> hidv(is_mlp ? hidden : 0), probs(classes),
      dhid(is_mlp ? hidden : 0);

  auto forward_logits = [&](const std::vector<double>& u,
                            std::vector<double>& logits) {
    if (!is_mlp) {
      for (int cls = 0; cls < classes; ++cls) {
        double s = b1[cls];
        const double* row = w1.data() + static_cast<std::size_t>(cls) * k;
        for (std::size_t j = 0; j < k; ++j) s += row[j] * u[j];
        logits[cls] = s;
      }
      return;
    }
    for (int jj = 0; jj < hidden; ++jj) {
      double s = b1[jj];
      const double* row = w1.data() + static_cast<std::size_t>(jj) * k;
      for (std::size_t j = 0; j < k; ++j) s += row[j] * u[j];
      hidv[jj] = s > 0.0 ? s : 0.0;
    }
    for (int cls = 0; cls < classes; ++cls) {
      double s = b2[cls];
      const double* row = w2.data() + static_cast<std::size_t>(cls) * hidden;
      for (int jj = 0; jj < hidden; ++jj) s += row[jj] * hidv[jj];
      logits[cls] = s;
    }
  };

  std::vector<double> logits(classes);
  std::vector<std::size_t> batch_order(tm.x.size());
  std::iota(batch_order.begin(), batch_order.end(), 0);

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    rng.shuffle(batch_order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < batch_order.size();
         start += opt.batch_size) {
      std::size_t end = std::min(batch_order.size(),
                                 start + static_cast<std::size_t>(opt.batch_size));
      double inv_b = 1.0 / static_cast<double>(end - start);

      std::vector<double> gw1(w1.size(), 0.0), gb1(b1.size(), 0.0);
      std::vector<double> gw2(w2.size(), 0.0), gb2(b2.size(), 0.0);

      for (std::size_t bi = start; bi < end; ++bi) {
        const auto& u = tm.x[batch_order[bi]];
        int label = tm.y[batch_order[bi]];
        forward_logits(u, logits);
        double mx = *std::max_element(logits.begin(), logits.end());
        double sum = 0.0;
        for (int cls = 0; cls < classes; ++cls) {
          probs[cls] = std::exp(logits[cls] - mx);
          sum += probs[cls];
        }
        for (double& v : probs) v /= sum;
        epoch_loss -= std::log(std::max(probs[label], 1e-300));

        // dL/dlogit = p - onehot
        if (!is_mlp) {
          for (int cls = 0; cls < classes; ++cls) {
            double g = (probs[cls] - (cls == label ? 1.0 : 0.0)) * inv_b;
            gb1[cls] += g;
            double* row = gw1.data() + static_cast<std::size_t>(cls) * k;
            for (std::size_t j = 0; j < k; ++j) row[j] += g * u[j];
          }
        } else {
          std::fill(dhid.begin(), dhid.end(), 0.0);
          for (int cls = 0; cls < classes; ++cls) {
            double g = (probs[cls] - (cls == label ? 1.0 : 0.0)) * inv_b;
            gb2[cls] += g;
            double* row = gw2.data() + static_cast<std::size_t>(cls) * hidden;
            for (int jj = 0; jj < hidden; ++jj) {
              row[jj] += g * hidv[jj];
              dhid[jj] += g * w2[static_cast<std::size_t>(cls) * hidden + jj];
            }
          }
          for (int jj = 0; jj < hidden; ++jj) {
            if (hidv[jj] <= 0.0) continue;  // relu gate
            gb1[jj] += dhid[jj];
            double* row = gw1.data() + static_cast<std::size_t>(jj) * k;
            for (std::size_t j = 0; j < k; ++j) row[j] += dhid[jj] * u[j];
          }
        }
      }

      for (std::size_t j = 0; j < w1.size(); ++j) w1[j] -= opt.lr * gw1[j];
      for (std::size_t j = 0; j < b1.size(); ++j) b1[j] -= opt.lr * gb1[j];
      for (std::size_t j = 0; j < w2.size(); ++j) w2[j] -= opt.lr * gw2[j];
      for (std::size_t j = 0; j < b2.size(); ++j) b2[j] -= opt.lr * gb2[j];
    }
    if (!std::isfinite(epoch_loss))
      throw DivergenceError("training diverged at epoch " +
                            std::to_string(epoch));
  }

  // Fold the 1/255 input scaling into the first layer and build the model.
  TrainResult res;
  res.epochs = opt.epochs;
  res.seed = opt.seed;
  if (!is_mlp) {
    auto m = std::make_unique<LinearSoftmax>(h, w, c, classes);
    for (std::size_t j = 0; j < w1.size(); ++j) m->weights()[j] = w1[j] / 255.0;
    m->bias() = b1;
    res.model = std::move(m);
  } else {
    auto m = std::make_unique<MlpOneHidden>(h, w, c, classes, hidden);
    for (std::size_t j = 0; j < w1.size(); ++j) m->w1()[j] = w1[j] / 255.0;
    m->b1() = b1;
    m->w2() = w2;
    m->b2() = b2;
    res.model = std::move(m);
  }

  res.train_accuracy = detail::accuracy_on(*res.model, d, train_idx);
  res.test_accuracy =
      test_idx.empty() ? res.train_accuracy
                       : detail::accuracy_on(*res.model, d, test_idx);
  return res;
}

}  // namespace dualqa

#endif  // DUALQA_TRAIN_HPP
