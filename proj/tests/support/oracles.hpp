#pragma once

// Reference implementations used as test oracles. They are written for
// obviousness, not speed, and share no code with the library.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <set>
#include <vector>

namespace oracle {

// Smallest sample value v such that #(x <= v) / N >= alpha, by scanning the
// empirical CDF over every candidate value.
inline double quantile_by_cdf_scan(const std::vector<double>& xs, double alpha) {
  std::vector<double> candidates = xs;
  std::sort(candidates.begin(), candidates.end());
  for (double v : candidates) {
    std::size_t below = 0;
    for (double x : xs) below += x <= v ? 1 : 0;
    if (static_cast<double>(below) >= alpha * static_cast<double>(xs.size()) - 1e-12) return v;
  }
  return candidates.back();
}

// Sort, threshold at the alpha-quantile, average everything at or below it.
inline double cvar_by_enumeration(const std::vector<double>& xs, double alpha) {
  const double q = quantile_by_cdf_scan(xs, alpha);
  double sum = 0.0;
  std::size_t n = 0;
  for (double x : xs)
    if (x <= q) {
      sum += x;
      ++n;
    }
  return sum / static_cast<double>(n);
}

struct Gae {
  std::vector<double> adv, ret;
};

// Backward recursion written directly from the definitions on the list of
// masked-in positions only.
inline Gae gae_backward(const std::vector<double>& r, const std::vector<double>& v,
                        const std::vector<double>& m, double gamma, double lam) {
  std::vector<std::size_t> live;
  for (std::size_t t = 0; t < m.size(); ++t)
    if (m[t] != 0.0) live.push_back(t);
  Gae g{std::vector<double>(r.size(), 0.0), v};
  for (std::size_t k = live.size(); k-- > 0;) {
    const std::size_t t = live[k];
    const double v_next = k + 1 < live.size() ? v[live[k + 1]] : 0.0;
    const double a_next = k + 1 < live.size() ? g.adv[live[k + 1]] : 0.0;
    g.adv[t] = r[t] + gamma * v_next - v[t] + gamma * lam * a_next;
    g.ret[t] = g.adv[t] + v[t];
  }
  return g;
}

// Reward-to-go: sum_{k >= t} r_k over masked-in positions.
inline std::vector<double> reward_to_go(const std::vector<double>& r, const std::vector<double>& m) {
  std::vector<double> out(r.size(), 0.0);
  double acc = 0.0;
  for (std::size_t t = r.size(); t-- > 0;)
    if (m[t] != 0.0) {
      acc += r[t];
      out[t] = acc;
    }
  return out;
}

inline std::vector<double> softmax(const std::vector<double>& z) {
  double mx = z[0];
  for (double x : z) mx = std::max(mx, x);
  std::vector<double> p(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) s += (p[i] = std::exp(z[i] - mx));
  for (double& x : p) x /= s;
  return p;
}

template <class T>
inline double distinct_ngram_ratio(const std::vector<T>& toks, std::size_t n) {
  std::set<std::vector<T>> seen;
  for (std::size_t i = 0; i + n <= toks.size(); ++i)
    seen.insert(std::vector<T>(toks.begin() + static_cast<std::ptrdiff_t>(i),
                               toks.begin() + static_cast<std::ptrdiff_t>(i + n)));
  return static_cast<double>(seen.size()) / static_cast<double>(toks.size() - n + 1);
}

// Schedule quota from the three-phase definition using exact rational
// arithmetic on alpha = a_num / a_den and rho = r_num / r_den.
inline std::size_t quota_rational(std::size_t B, long a_num, long a_den, std::size_t i0, long r_num,
                                  long r_den, std::size_t M, std::size_t i) {
  auto ceil_div = [](long p, long q) { return (p + q - 1) / q; };
  const long ramp_end = ceil_div(r_num * static_cast<long>(M), r_den);
  const long min_q = ceil_div(a_num * static_cast<long>(B), a_den);
  if (i <= i0) return B;
  if (static_cast<long>(i) >= ramp_end) return static_cast<std::size_t>(min_q);
  // 1 - K (i - i0) with K = (1 - alpha) / (ramp_end - i0), as a fraction p / q.
  const long span = ramp_end - static_cast<long>(i0);
  const long step = static_cast<long>(i - i0);
  const long p = a_den * span - (a_den - a_num) * step;
  const long q = a_den * span;
  const long p_alpha = a_num * span;  // alpha on the same denominator
  const long frac = std::max(p, p_alpha);
  return static_cast<std::size_t>(ceil_div(static_cast<long>(B) * frac, q));
}

}  // namespace oracle
