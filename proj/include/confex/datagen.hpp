#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "confex/rational.hpp"
#include "confex/rng.hpp"
#include "confex/scoring.hpp"

namespace confex {

// Gaussian benchmark: K local null distributions N(mu_k, I_d) with centroids
// on a circle of radius delta in the plane spanned by two orthogonal unit
// vectors (the equilateral triangle when K = 3), and globally stationary
// novelties N(mu_alt, I_d) with a sparse mean shift on the first five
// coordinates.
//
// pi0 is the true-null fraction of ALL observations (train + test); the
// defaults put floor((1-pi0)*4000) = 400 novelties among the 1000 test
// points.
struct SynthConfig {
  int d = 20;
  int K = 3;
  double delta = 0.0;
  Rational pi0{9, 10};
  std::int64_t n_train_total = 3000;
  std::int64_t n_test_total = 1000;
  std::uint64_t seed = 0;
};

namespace detail {

// u on the first floor(d/2) coordinates, v on the rest, both unit length.
inline void support_directions(int d, std::vector<double>& u, std::vector<double>& v) {
  const int half = d / 2;
  u.assign(static_cast<std::size_t>(d), 0.0);
  v.assign(static_cast<std::size_t>(d), 0.0);
  const double cu = 1.0 / std::sqrt(static_cast<double>(half));
  const double cv = 1.0 / std::sqrt(static_cast<double>(d - half));
  for (int i = 0; i < half; ++i) u[static_cast<std::size_t>(i)] = cu;
  for (int i = half; i < d; ++i) v[static_cast<std::size_t>(i)] = cv;
}

}  // namespace detail

inline std::vector<std::vector<double>> centroids(const SynthConfig& cfg) {
  if (cfg.d < 2) throw std::invalid_argument("centroids: need d >= 2");
  if (cfg.K < 1) throw std::invalid_argument("centroids: need K >= 1");
  std::vector<double> u, v;
  detail::support_directions(cfg.d, u, v);

  std::vector<std::vector<double>> mus;
  mus.reserve(static_cast<std::size_t>(cfg.K));
  if (cfg.K == 3) {
    // exact triangle: delta*u, delta*(-u/2 + v*sqrt(3)/2), delta*(-u/2 - v*sqrt(3)/2)
    const double s3h = std::sqrt(3.0) / 2.0;
    for (int k = 0; k < 3; ++k) {
      std::vector<double> mu(static_cast<std::size_t>(cfg.d));
      for (int i = 0; i < cfg.d; ++i) {
        const auto idx = static_cast<std::size_t>(i);
        double cu = k == 0 ? 1.0 : -0.5;
        double cv = k == 0 ? 0.0 : (k == 1 ? s3h : -s3h);
        mu[idx] = cfg.delta * (cu * u[idx] + cv * v[idx]);
      }
      mus.push_back(std::move(mu));
    }
  } else {
    // K equally spaced points on the circle of radius delta in span{u, v}
    for (int k = 0; k < cfg.K; ++k) {
      const double angle = 2.0 * 3.14159265358979323846 * k / cfg.K;
      const double cu = std::cos(angle);
      const double cv = std::sin(angle);
      std::vector<double> mu(static_cast<std::size_t>(cfg.d));
      for (int i = 0; i < cfg.d; ++i) {
        const auto idx = static_cast<std::size_t>(i);
        mu[idx] = cfg.delta * (cu * u[idx] + cv * v[idx]);
      }
      mus.push_back(std::move(mu));
    }
  }
  return mus;
}

inline std::vector<double> novelty_mean(const SynthConfig& cfg) {
  if (cfg.d < 5) throw std::invalid_argument("novelty_mean: need d >= 5");
  std::vector<double> mu(static_cast<std::size_t>(cfg.d), 0.0);
  const double shift = std::sqrt(2.0 * std::log(static_cast<double>(cfg.d)));
  for (int i = 0; i < 5; ++i) mu[static_cast<std::size_t>(i)] = shift;
  return mu;
}

namespace detail {

// first K-1 agents take ceil(total/K), the last takes the remainder
inline std::vector<std::int64_t> share_counts(std::int64_t total, int K) {
  std::vector<std::int64_t> out(static_cast<std::size_t>(K));
  const std::int64_t head = (total + K - 1) / K;
  std::int64_t assigned = 0;
  for (int k = 0; k + 1 < K; ++k) {
    out[static_cast<std::size_t>(k)] = head;
    assigned += head;
  }
  out[static_cast<std::size_t>(K - 1)] = total - assigned;
  return out;
}

inline std::vector<double> gaussian_point(Rng& rng, const std::vector<double>& mean) {
  std::vector<double> x(mean.size());
  for (std::size_t i = 0; i < mean.size(); ++i) x[i] = mean[i] + rng.next_gaussian();
  return x;
}

}  // namespace detail

inline std::vector<AgentData> generate(const SynthConfig& cfg) {
  const auto mus = centroids(cfg);
  const auto mu_alt = novelty_mean(cfg);
  if (cfg.pi0 < Rational(0, 1) || cfg.pi0 > Rational(1, 1)) {
    throw std::invalid_argument("generate: pi0 must lie in [0, 1]");
  }
  if (cfg.n_train_total < cfg.K || cfg.n_test_total < 0) {
    throw std::invalid_argument("generate: sample totals too small");
  }

  const auto train_counts = detail::share_counts(cfg.n_train_total, cfg.K);
  const auto test_counts = detail::share_counts(cfg.n_test_total, cfg.K);

  // novelty budget: everything that is not a true null, all of it in the
  // test samples (training data is pure null by construction)
  const std::int64_t total = cfg.n_train_total + cfg.n_test_total;
  const std::int64_t null_total = cfg.pi0.num() * total / cfg.pi0.den();
  const std::int64_t novel_total = total - null_total;
  if (novel_total > cfg.n_test_total) {
    throw std::invalid_argument("generate: pi0 implies more novelties than test points");
  }
  const auto novel_counts = detail::share_counts(novel_total, cfg.K);

  for (int k = 0; k < cfg.K; ++k) {
    const auto idx = static_cast<std::size_t>(k);
    if (train_counts[idx] < 2 || test_counts[idx] < 0 || novel_counts[idx] < 0 ||
        novel_counts[idx] > test_counts[idx]) {
      throw std::invalid_argument("generate: a share leaves an agent without usable data");
    }
  }

  std::vector<AgentData> agents(static_cast<std::size_t>(cfg.K));
  for (int k = 0; k < cfg.K; ++k) {
    const auto idx = static_cast<std::size_t>(k);
    auto& agent = agents[idx];
    const std::int64_t m = test_counts[idx];
    const std::int64_t m_novel = novel_counts[idx];
    const std::int64_t m_null = m - m_novel;

    Rng train_rng(seed_chain(cfg.seed, 0xDA7Aull, static_cast<std::uint64_t>(k), 0));
    Rng test_null_rng(seed_chain(cfg.seed, 0xDA7Aull, static_cast<std::uint64_t>(k), 1));
    Rng novelty_rng(seed_chain(cfg.seed, 0xDA7Aull, static_cast<std::uint64_t>(k), 2));

    agent.train_nulls.reserve(static_cast<std::size_t>(train_counts[idx]));
    for (std::int64_t i = 0; i < train_counts[idx]; ++i) {
      agent.train_nulls.push_back(detail::gaussian_point(train_rng, mus[idx]));
    }
    agent.tests.reserve(static_cast<std::size_t>(m));
    agent.is_novelty.reserve(static_cast<std::size_t>(m));
    for (std::int64_t i = 0; i < m_null; ++i) {
      agent.tests.push_back(detail::gaussian_point(test_null_rng, mus[idx]));
      agent.is_novelty.push_back(0);
    }
    for (std::int64_t i = 0; i < m_novel; ++i) {
      agent.tests.push_back(detail::gaussian_point(novelty_rng, mu_alt));
      agent.is_novelty.push_back(1);
    }
  }
  return agents;
}

// One row per point: agent, split role, hidden label, then the features.
inline void export_csv(std::ostream& os, const std::vector<AgentData>& agents) {
  os << "agent,role,label";
  if (!agents.empty() && !agents.front().train_nulls.empty()) {
    for (std::size_t i = 0; i < agents.front().train_nulls.front().size(); ++i) {
      os << ",x" << i;
    }
  }
  os << "\n";
  char buf[64];
  auto put_row = [&](int agent, const char* role, int label, const std::vector<double>& x) {
    os << agent << ',' << role << ',' << label;
    for (double v : x) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      os << ',' << buf;
    }
    os << "\n";
  };
  for (std::size_t k = 0; k < agents.size(); ++k) {
    for (const auto& x : agents[k].train_nulls) put_row(static_cast<int>(k), "train_null", 0, x);
    for (std::size_t t = 0; t < agents[k].tests.size(); ++t) {
      put_row(static_cast<int>(k), "test", agents[k].is_novelty[t] ? 1 : 0, agents[k].tests[t]);
    }
  }
}

}  // namespace confex
