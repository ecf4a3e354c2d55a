// SPDX-License-Identifier: Apache-2.0
// Textbook linear Kalman filter on plain arrays, written without Eigen or any
// library code so that it can serve as an independent reference.
#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

namespace dcomp::testing {

using Row = std::vector<double>;
using Grid = std::vector<Row>;

inline Grid identity(std::size_t n) {
  Grid g(n, Row(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) g[i][i] = 1.0;
  return g;
}

inline Grid matmul(const Grid& a, const Grid& b) {
  Grid c(a.size(), Row(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

inline Grid transpose(const Grid& a) {
  Grid t(a[0].size(), Row(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) t[j][i] = a[i][j];
  return t;
}

// Gauss-Jordan inverse with partial pivoting.
inline Grid inverse(Grid a) {
  const std::size_t n = a.size();
  Grid inv = identity(n);
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    if (a[piv][col] == 0.0) throw std::runtime_error("singular");
    std::swap(a[piv], a[col]);
    std::swap(inv[piv], inv[col]);
    const double d = a[col][col];
    for (std::size_t j = 0; j < n; ++j) {
      a[col][j] /= d;
      inv[col][j] /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a[r][col];
      for (std::size_t j = 0; j < n; ++j) {
        a[r][j] -= f * a[col][j];
        inv[r][j] -= f * inv[col][j];
      }
    }
  }
  return inv;
}

// x' = F x + u, P' = F P F^T + Q; measurement z = H x + v, v ~ N(0, R),
// with the simple-form update P <- (I - K H) P.
struct TextbookKalman {
  Row x;
  Grid p;
  Grid f, q, h, r;
  Row u;

  void predict() {
    Row nx(x.size(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      for (std::size_t j = 0; j < x.size(); ++j) nx[i] += f[i][j] * x[j];
      nx[i] += u[i];
    }
    x = nx;
    p = matmul(matmul(f, p), transpose(f));
    for (std::size_t i = 0; i < x.size(); ++i)
      for (std::size_t j = 0; j < x.size(); ++j) p[i][j] += q[i][j];
  }

  void update(const Row& z) {
    const Grid ht = transpose(h);
    Grid s = matmul(matmul(h, p), ht);
    for (std::size_t i = 0; i < s.size(); ++i)
      for (std::size_t j = 0; j < s.size(); ++j) s[i][j] += r[i][j];
    const Grid k = matmul(matmul(p, ht), inverse(s));
    Row innov(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
      double hx = 0.0;
      for (std::size_t j = 0; j < x.size(); ++j) hx += h[i][j] * x[j];
      innov[i] = z[i] - hx;
    }
    for (std::size_t i = 0; i < x.size(); ++i)
      for (std::size_t j = 0; j < z.size(); ++j) x[i] += k[i][j] * innov[j];
    Grid ikh = identity(x.size());
    const Grid kh = matmul(k, h);
    for (std::size_t i = 0; i < x.size(); ++i)
      for (std::size_t j = 0; j < x.size(); ++j) ikh[i][j] -= kh[i][j];
    p = matmul(ikh, p);
  }
};

}  // namespace dcomp::testing
