#ifndef DUALQA_OPTIM_HPP
#define DUALQA_OPTIM_HPP

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dualqa/errors.hpp"
#include "dualqa/rng.hpp"

namespace dualqa {

/// How an out-of-bounds coordinate is brought back into the feasible box.
/// Clamp snaps to the violated bound, RandomReset redraws uniformly inside,
/// Modulo wraps (the natural choice for cyclic coordinates like pixel
/// positions).
enum class RepairPolicy { Clamp, RandomReset, Modulo };

struct SearchSpace {
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<RepairPolicy> policy;

  std::size_t dimension() const { return lower.size(); }

  static SearchSpace uniform(std::size_t dim, double lo, double hi,
                             RepairPolicy p = RepairPolicy::RandomReset) {
    SearchSpace s;
    s.lower.assign(dim, lo);
    s.upper.assign(dim, hi);
    s.policy.assign(dim, p);
    return s;
  }

  void validate() const {
    if (lower.empty() || lower.size() != upper.size() ||
        lower.size() != policy.size())
      throw Error("search space: inconsistent dimension");
    for (std::size_t i = 0; i < lower.size(); ++i)
      if (!(lower[i] < upper[i]))
        throw Error("search space: lower >= upper at coordinate " +
                    std::to_string(i));
  }
};

struct Budget {
  std::uint64_t max_evaluations = 0;
  std::function<bool(double)> early_stop;  // optional
};

struct OptResult {
  std::vector<double> best_point;
  double best_value = std::numeric_limits<double>::infinity();
  std::uint64_t evaluations_used = 0;
  bool stopped_early = false;
  std::uint64_t seed = 0;
};

using Objective = std::function<double(std::span<const double>)>;

namespace detail {

inline double repair_coordinate(double v, double lo, double hi,
                                RepairPolicy policy, Rng& rng) {
  switch (policy) {
    case RepairPolicy::Modulo: {
      double span = hi - lo;
      double r = std::fmod(v - lo, span);
      if (r < 0.0) r += span;
      if (r >= span) r = 0.0;  // fmod rounding edge
      return lo + r;
    }
    case RepairPolicy::Clamp:
      return std::clamp(v, lo, hi);
    case RepairPolicy::RandomReset:
      if (v < lo || v > hi) return rng.uniform(lo, hi);
      return v;
  }
  return v;
}

inline void repair_point(std::vector<double>& x, const SearchSpace& s,
                         Rng& rng) {
  for (std::size_t i = 0; i < x.size(); ++i)
    x[i] = repair_coordinate(x[i], s.lower[i], s.upper[i], s.policy[i], rng);
}

// Non-finite objective values rank behind every finite value so a stray
// NaN cannot poison selection or best-so-far tracking.
inline double sanitize(double v) {
  return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
}

}  // namespace detail

struct DeOptions {
  int np = 400;
  int generations = 100;
  double cr = 1.0;
  double fweight = 0.5;
};

/// Canonical DE/rand/1/bin. With cr = 1 every trial coordinate comes from
/// the mutant vector. Out-of-bounds trial coordinates are repaired per the
/// search-space policy before evaluation; selection keeps the better of
/// trial and parent. Stops on the evaluation budget, the generation cap,
/// or the early-stop predicate (checked after every evaluation).
inline OptResult de_minimize(const Objective& f, const SearchSpace& s,
                             const DeOptions& opt, std::uint64_t seed,
                             const Budget& b) {
  s.validate();
  if (opt.np < 4) throw Error("de: population size must be >= 4");
  if (!(opt.cr >= 0.0 && opt.cr <= 1.0)) throw Error("de: cr outside [0, 1]");
  if (!(opt.fweight > 0.0)) throw Error("de: mutation weight must be > 0");
  if (static_cast<std::uint64_t>(opt.np) > b.max_evaluations)
    throw BudgetTooSmallError(
        "de: budget " + std::to_string(b.max_evaluations) +
        " cannot evaluate the initial population of " + std::to_string(opt.np));

  const std::size_t dim = s.dimension();
  const std::size_t np = static_cast<std::size_t>(opt.np);
  Rng rng(seed);

  OptResult res;
  res.seed = seed;

  std::vector<std::vector<double>> pop(np, std::vector<double>(dim));
  std::vector<double> fit(np);

  auto evaluate = [&](const std::vector<double>& x) {
    double v = detail::sanitize(f(x));
    ++res.evaluations_used;
    if (v < res.best_value) {
      res.best_value = v;
      res.best_point = x;
    }
    if (b.early_stop && b.early_stop(v)) res.stopped_early = true;
    return v;
  };

  for (std::size_t i = 0; i < np; ++i) {
    for (std::size_t j = 0; j < dim; ++j)
      pop[i][j] = rng.uniform(s.lower[j], s.upper[j]);
    fit[i] = evaluate(pop[i]);
    if (res.stopped_early) return res;
  }

  std::vector<double> trial(dim);
  for (int gen = 0; gen < opt.generations; ++gen) {
    if (res.evaluations_used >= b.max_evaluations) break;
    for (std::size_t i = 0; i < np; ++i) {
      std::size_t r1, r2, r3;
      do { r1 = rng.index(np); } while (r1 == i);
      do { r2 = rng.index(np); } while (r2 == i || r2 == r1);
      do { r3 = rng.index(np); } while (r3 == i || r3 == r1 || r3 == r2);

      std::size_t jrand = rng.index(dim);
      for (std::size_t j = 0; j < dim; ++j) {
        if (rng.uniform01() < opt.cr || j == jrand)
          trial[j] = pop[r1][j] + opt.fweight * (pop[r2][j] - pop[r3][j]);
        else
          trial[j] = pop[i][j];
      }
      detail::repair_point(trial, s, rng);

      double fv = evaluate(trial);
      if (fv <= fit[i]) {
        pop[i] = trial;
        fit[i] = fv;
      }
      if (res.stopped_early) return res;
    }
  }
  return res;
}

struct CmaesOptions {
  double sigma0 = 1.0;
  std::optional<int> lambda;                         // default 4 + 3 ln n
  std::optional<std::vector<double>> initial_mean;   // default uniform draw
};

/// Canonical (mu/mu_w, lambda)-CMA-ES with rank-one and rank-mu covariance
/// updates and cumulative step-size adaptation. Sampled points are
/// repaired per the search-space policy before evaluation (clamp is the
/// usual choice here) and the repaired points feed the strategy update.
/// A non-finite covariance eigenvalue triggers one restart with doubled
/// sigma; a second failure raises CovarianceDegeneracyError.
inline OptResult cmaes_minimize(const Objective& f, const SearchSpace& s,
                                const CmaesOptions& opt, std::uint64_t seed,
                                const Budget& b) {
  s.validate();
  if (!(opt.sigma0 > 0.0)) throw Error("cmaes: sigma0 must be > 0");
  if (b.max_evaluations == 0) throw BudgetTooSmallError("cmaes: zero budget");

  const int n = static_cast<int>(s.dimension());
  const int lambda =
      opt.lambda.value_or(4 + static_cast<int>(std::floor(3.0 * std::log(n))));
  if (lambda < 2) throw Error("cmaes: lambda must be >= 2");
  const int mu = lambda / 2;

  Eigen::VectorXd weights(mu);
  for (int i = 0; i < mu; ++i)
    weights[i] = std::log(mu + 0.5) - std::log(i + 1.0);
  weights /= weights.sum();
  const double mueff = 1.0 / weights.squaredNorm();

  const double cs = (mueff + 2.0) / (n + mueff + 5.0);
  const double ds =
      1.0 + 2.0 * std::max(0.0, std::sqrt((mueff - 1.0) / (n + 1.0)) - 1.0) + cs;
  const double cc = (4.0 + mueff / n) / (n + 4.0 + 2.0 * mueff / n);
  const double c1 = 2.0 / ((n + 1.3) * (n + 1.3) + mueff);
  const double cmu = std::min(
      1.0 - c1, 2.0 * (mueff - 2.0 + 1.0 / mueff) / ((n + 2.0) * (n + 2.0) + mueff));
  const double chi_n =
      std::sqrt(static_cast<double>(n)) *
      (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * static_cast<double>(n) * n));

  Rng rng(seed);

  OptResult res;
  res.seed = seed;

  auto fresh_mean = [&]() {
    Eigen::VectorXd m(n);
    if (opt.initial_mean) {
      if (opt.initial_mean->size() != static_cast<std::size_t>(n))
        throw Error("cmaes: initial mean dimension mismatch");
      for (int i = 0; i < n; ++i) m[i] = (*opt.initial_mean)[i];
    } else {
      for (int i = 0; i < n; ++i) m[i] = rng.uniform(s.lower[i], s.upper[i]);
    }
    return m;
  };

  Eigen::VectorXd mean = fresh_mean();
  double sigma = opt.sigma0;
  Eigen::MatrixXd C = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd B = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd D = Eigen::VectorXd::Ones(n);
  Eigen::VectorXd ps = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd pc = Eigen::VectorXd::Zero(n);
  std::uint64_t evals_at_decomposition = 0;
  std::uint64_t generation = 0;
  bool restarted = false;

  // Lazy eigendecomposition: refresh B and D only after enough evaluations
  // that the O(n^3) solve stays a small fraction of total work.
  const double decomposition_interval =
      std::max(1.0, static_cast<double>(lambda) / ((c1 + cmu) * n * 10.0));

  auto restart = [&](const std::string& why) {
    if (restarted)
      throw CovarianceDegeneracyError("cmaes: " + why + " after restart");
    restarted = true;
    sigma = 2.0 * opt.sigma0;
    mean = fresh_mean();
    C = Eigen::MatrixXd::Identity(n, n);
    B = Eigen::MatrixXd::Identity(n, n);
    D = Eigen::VectorXd::Ones(n);
    ps.setZero();
    pc.setZero();
    generation = 0;
    evals_at_decomposition = res.evaluations_used;
  };

  auto decompose = [&]() -> bool {
    C = 0.5 * (C + C.transpose().eval());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(C);
    if (solver.info() != Eigen::Success) return false;
    Eigen::VectorXd ev = solver.eigenvalues();
    double max_ev = ev.maxCoeff();
    if (!std::isfinite(max_ev) || max_ev <= 0.0) return false;
    for (int i = 0; i < n; ++i) {
      if (!std::isfinite(ev[i])) return false;
      if (ev[i] < -1e-9 * max_ev) return false;
      ev[i] = std::max(ev[i], 1e-14 * max_ev);  // numerical floor
    }
    B = solver.eigenvectors();
    D = ev.cwiseSqrt();
    evals_at_decomposition = res.evaluations_used;
    return true;
  };

  std::vector<Eigen::VectorXd> xs(lambda), ys(lambda);
  std::vector<double> fs(lambda);
  std::vector<int> order(lambda);
  std::vector<double> x_buf(n);

  while (res.evaluations_used < b.max_evaluations) {
    if (res.evaluations_used - evals_at_decomposition >=
            decomposition_interval ||
        generation == 0) {
      if (!decompose()) {
        restart("covariance eigendecomposition failed");
        if (!decompose())
          throw CovarianceDegeneracyError(
              "cmaes: covariance degenerate immediately after restart");
      }
    }

    for (int i = 0; i < lambda; ++i) {
      Eigen::VectorXd z(n);
      for (int j = 0; j < n; ++j) z[j] = rng.normal();
      Eigen::VectorXd x = mean + sigma * (B * (D.asDiagonal() * z));
      for (int j = 0; j < n; ++j)
        x[j] = detail::repair_coordinate(x[j], s.lower[j], s.upper[j],
                                         s.policy[j], rng);
      for (int j = 0; j < n; ++j) x_buf[j] = x[j];
      double v = detail::sanitize(f(x_buf));
      ++res.evaluations_used;
      if (v < res.best_value) {
        res.best_value = v;
        res.best_point = x_buf;
      }
      xs[i] = std::move(x);
      ys[i] = (xs[i] - mean) / sigma;
      fs[i] = v;
      if (b.early_stop && b.early_stop(v)) {
        res.stopped_early = true;
        return res;
      }
    }

    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int c2) { return fs[a] < fs[c2]; });

    Eigen::VectorXd y_w = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < mu; ++i) y_w += weights[i] * ys[order[i]];
    mean += sigma * y_w;

    // C^(-1/2) (m_new - m_old) / sigma, using the cached decomposition.
    Eigen::VectorXd c_inv_sqrt_yw =
        B * D.cwiseInverse().asDiagonal() * (B.transpose() * y_w);
    ps = (1.0 - cs) * ps +
         std::sqrt(cs * (2.0 - cs) * mueff) * c_inv_sqrt_yw;

    ++generation;
    double ps_norm = ps.norm();
    double expected_decay =
        std::sqrt(1.0 - std::pow(1.0 - cs, 2.0 * static_cast<double>(generation)));
    bool hsig = ps_norm / expected_decay / chi_n < 1.4 + 2.0 / (n + 1.0);

    pc = (1.0 - cc) * pc;
    if (hsig) pc += std::sqrt(cc * (2.0 - cc) * mueff) * y_w;

    Eigen::MatrixXd rank_mu = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < mu; ++i)
      rank_mu.noalias() += weights[i] * ys[order[i]] * ys[order[i]].transpose();

    double c1a = c1 * (1.0 - (hsig ? 0.0 : 1.0) * cc * (2.0 - cc));
    C = (1.0 - c1a - cmu) * C + c1 * pc * pc.transpose() + cmu * rank_mu;

    sigma *= std::exp((cs / ds) * (ps_norm / chi_n - 1.0));

    if (!std::isfinite(sigma) || !mean.allFinite() || !C.allFinite()) {
      restart("non-finite strategy state");
      if (!decompose())
        throw CovarianceDegeneracyError(
            "cmaes: covariance degenerate immediately after restart");
    }
  }

  return res;
}

}  // namespace dualqa

#endif  // DUALQA_OPTIM_HPP
