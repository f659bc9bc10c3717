#pragma once

// Naive long-double MLP used as an independent oracle in tests. Plain loops
// over the same flat layout as metacal::ParamVector, no Eigen.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "metacal/nnet.hpp"

namespace reftest {

using Real = long double;
using Vec = std::vector<Real>;

inline Vec to_real(const metacal::ParamVector& p) {
  Vec v(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) v[i] = p[i];
  return v;
}

inline metacal::ParamVector to_params(const metacal::MlpSpec& spec, const Vec& v) {
  std::vector<double> d(v.begin(), v.end());
  return metacal::ParamVector(spec, std::move(d));
}

struct Layer {
  std::size_t w, b, in, out;
  bool relu;
};

inline std::vector<Layer> layers(const metacal::MlpSpec& spec) {
  std::vector<Layer> ls;
  std::size_t off = 0;
  std::size_t in = spec.input_dim;
  for (std::size_t l = 0; l <= spec.hidden_widths.size(); ++l) {
    const bool last = l == spec.hidden_widths.size();
    const std::size_t out = last ? spec.output_dim : spec.hidden_widths[l];
    const auto act = last ? spec.output_activation : spec.hidden_activation;
    ls.push_back({off, off + in * out, in, out, act == metacal::Activation::ReLU});
    off += in * out + out;
    in = out;
  }
  return ls;
}

struct Trace {
  std::vector<Vec> pre;   // per layer
  std::vector<Vec> post;  // post[0] is the input
};

inline Trace forward_one(const metacal::MlpSpec& spec, const Vec& p, const Vec& x) {
  Trace t;
  t.post.push_back(x);
  for (const auto& L : layers(spec)) {
    Vec z(L.out), a(L.out);
    for (std::size_t o = 0; o < L.out; ++o) {
      Real s = p[L.b + o];
      for (std::size_t i = 0; i < L.in; ++i) s += p[L.w + o * L.in + i] * t.post.back()[i];
      z[o] = s;
      a[o] = L.relu ? (s > 0 ? s : 0) : s;
    }
    t.pre.push_back(z);
    t.post.push_back(a);
  }
  return t;
}

inline Vec row(const metacal::Batch& b, std::size_t r) {
  Vec x(static_cast<std::size_t>(b.inputs.cols()));
  for (std::size_t c = 0; c < x.size(); ++c) x[c] = b.inputs(Eigen::Index(r), Eigen::Index(c));
  return x;
}

inline Real loss(const metacal::MlpSpec& spec, const Vec& p, const metacal::Batch& b) {
  Real s = 0;
  for (std::size_t r = 0; r < b.size(); ++r) {
    const auto t = forward_one(spec, p, row(b, r));
    s += std::fabs(t.post.back()[0] - Real(b.targets(Eigen::Index(r))));
  }
  return s / Real(b.size());
}

inline int sgn(Real v) { return v > 0 ? 1 : (v < 0 ? -1 : 0); }

/// Subgradient with sign(0) = 0 and ReLU'(0) = 0.
inline Vec gradient(const metacal::MlpSpec& spec, const Vec& p, const metacal::Batch& b) {
  const auto ls = layers(spec);
  Vec g(p.size(), 0);
  for (std::size_t r = 0; r < b.size(); ++r) {
    const auto t = forward_one(spec, p, row(b, r));
    Vec delta{Real(sgn(t.post.back()[0] - Real(b.targets(Eigen::Index(r))))) / Real(b.size())};
    for (std::size_t l = ls.size(); l-- > 0;) {
      const auto& L = ls[l];
      for (std::size_t o = 0; o < L.out; ++o) {
        if (L.relu && !(t.pre[l][o] > 0)) delta[o] = 0;
      }
      Vec prev(L.in, 0);
      for (std::size_t o = 0; o < L.out; ++o) {
        g[L.b + o] += delta[o];
        for (std::size_t i = 0; i < L.in; ++i) {
          g[L.w + o * L.in + i] += delta[o] * t.post[l][i];
          prev[i] += p[L.w + o * L.in + i] * delta[o];
        }
      }
      delta = prev;
    }
  }
  return g;
}

/// Signs of every pre-activation and residual; equal patterns at two points
/// mean no kink was crossed between them when the path is short.
inline std::vector<int> pattern(const metacal::MlpSpec& spec, const Vec& p, const metacal::Batch& b) {
  std::vector<int> s;
  for (std::size_t r = 0; r < b.size(); ++r) {
    const auto t = forward_one(spec, p, row(b, r));
    for (const auto& z : t.pre) {
      for (Real v : z) s.push_back(sgn(v));
    }
    s.push_back(sgn(t.post.back()[0] - Real(b.targets(Eigen::Index(r)))));
  }
  return s;
}

/// Smallest |pre-activation| or |residual| over the batch.
inline Real kink_margin(const metacal::MlpSpec& spec, const Vec& p, const metacal::Batch& b) {
  Real m = INFINITY;
  for (std::size_t r = 0; r < b.size(); ++r) {
    const auto t = forward_one(spec, p, row(b, r));
    for (std::size_t l = 0; l + 1 < t.pre.size(); ++l) {
      for (Real v : t.pre[l]) m = std::fmin(m, std::fabs(v));
    }
    m = std::fmin(m, std::fabs(t.post.back()[0] - Real(b.targets(Eigen::Index(r)))));
  }
  return m;
}

inline Vec axpy(const Vec& x, Real a, const Vec& y) {
  Vec r(x);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] += a * y[i];
  return r;
}

inline Real norm(const Vec& v) {
  Real s = 0;
  for (Real x : v) s += x * x;
  return std::sqrt(s);
}

/// Norm-wise relative error of `got` against `want`.
inline Real rel_err(const metacal::ParamVector& got, const Vec& want) {
  Real d = 0;
  for (std::size_t i = 0; i < want.size(); ++i) d += (Real(got[i]) - want[i]) * (Real(got[i]) - want[i]);
  const Real n = norm(want);
  return std::sqrt(d) / (n > 0 ? n : 1);
}

}  // namespace reftest
