#pragma once

// Independent reference implementations for the metric tests.

#include "fillup/common.hpp"

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

namespace fillup::test {

using LMat = std::vector<std::vector<long double>>;

// Cyclic Jacobi eigendecomposition in extended precision.
inline void jacobi(LMat a, std::vector<long double>& values, LMat& vectors) {
  const std::size_t n = a.size();
  vectors.assign(n, std::vector<long double>(n, 0.0L));
  for (std::size_t i = 0; i < n; ++i) vectors[i][i] = 1.0L;
  for (int sweep = 0; sweep < 100; ++sweep) {
    long double off = 0.0L;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-36L) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::fabs(a[p][q]) < 1e-300L) continue;
        const long double theta = (a[q][q] - a[p][p]) / (2.0L * a[p][q]);
        const long double t = (theta >= 0 ? 1.0L : -1.0L) / (std::fabs(theta) + std::sqrt(theta * theta + 1.0L));
        const long double c = 1.0L / std::sqrt(t * t + 1.0L), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const long double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const long double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const long double vkp = vectors[k][p], vkq = vectors[k][q];
          vectors[k][p] = c * vkp - s * vkq;
          vectors[k][q] = s * vkp + c * vkq;
        }
      }
    }
  }
  values.resize(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = a[i][i];
}

inline LMat mul(const LMat& a, const LMat& b) {
  const std::size_t n = a.size();
  LMat c(n, std::vector<long double>(n, 0.0L));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t j = 0; j < n; ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

inline LMat sqrt_psd(const LMat& a) {
  std::vector<long double> ev;
  LMat v;
  jacobi(a, ev, v);
  const std::size_t n = a.size();
  LMat out(n, std::vector<long double>(n, 0.0L));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < n; ++k) out[i][j] += v[i][k] * std::sqrt(std::max(0.0L, ev[k])) * v[j][k];
  return out;
}

struct LSummary {
  std::vector<long double> mean;
  LMat cov;
};

inline LSummary summarize(const Matrix& x) {
  const std::size_t d = static_cast<std::size_t>(x.rows());
  const auto n = x.cols();
  LSummary s;
  s.mean.assign(d, 0.0L);
  for (Eigen::Index j = 0; j < n; ++j)
    for (std::size_t i = 0; i < d; ++i) s.mean[i] += x(static_cast<Eigen::Index>(i), j);
  for (auto& m : s.mean) m /= n;
  s.cov.assign(d, std::vector<long double>(d, 0.0L));
  for (Eigen::Index j = 0; j < n; ++j)
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b)
        s.cov[a][b] += (x(static_cast<Eigen::Index>(a), j) - s.mean[a]) * (x(static_cast<Eigen::Index>(b), j) - s.mean[b]);
  for (auto& row : s.cov)
    for (auto& v : row) v /= (n - 1);
  return s;
}

inline long double frechet_oracle(const Matrix& x, const Matrix& y) {
  auto a = summarize(x), b = summarize(y);
  long double fd = 0.0L;
  for (std::size_t i = 0; i < a.mean.size(); ++i) fd += (a.mean[i] - b.mean[i]) * (a.mean[i] - b.mean[i]);
  auto s1 = sqrt_psd(a.cov);
  auto inner = mul(mul(s1, b.cov), s1);
  auto root = sqrt_psd(inner);
  for (std::size_t i = 0; i < a.mean.size(); ++i) fd += a.cov[i][i] + b.cov[i][i] - 2.0L * root[i][i];
  return fd;
}

// O(n^2) precision and recall straight from the definition.
inline std::pair<double, double> pr_oracle(const Matrix& real, const Matrix& fake, int k) {
  auto radii = [&](const Matrix& s) {
    std::vector<double> r;
    for (Eigen::Index i = 0; i < s.cols(); ++i) {
      std::vector<double> d;
      for (Eigen::Index j = 0; j < s.cols(); ++j)
        if (i != j) {
          double acc = 0.0;
          for (Eigen::Index c = 0; c < s.rows(); ++c) acc += (s(c, i) - s(c, j)) * (s(c, i) - s(c, j));
          d.push_back(acc);
        }
      std::sort(d.begin(), d.end());
      r.push_back(d[static_cast<std::size_t>(k - 1)]);
    }
    return r;
  };
  auto cover = [](const Matrix& q, const Matrix& s, const std::vector<double>& r) {
    int in = 0;
    for (Eigen::Index i = 0; i < q.cols(); ++i) {
      bool hit = false;
      for (Eigen::Index j = 0; j < s.cols() && !hit; ++j) {
        double acc = 0.0;
        for (Eigen::Index c = 0; c < q.rows(); ++c) acc += (q(c, i) - s(c, j)) * (q(c, i) - s(c, j));
        hit = acc <= r[static_cast<std::size_t>(j)];
      }
      in += hit;
    }
    return static_cast<double>(in) / static_cast<double>(q.cols());
  };
  return {cover(fake, real, radii(real)), cover(real, fake, radii(fake))};
}

}  // namespace fillup::test
