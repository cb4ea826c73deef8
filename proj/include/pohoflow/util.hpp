// pohoflow: small numeric utilities shared across the library.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace pohoflow {

// ---------------------------------------------------------------------------
// Tridiagonal solves
// ---------------------------------------------------------------------------

/// Solves a symmetric positive definite tridiagonal system in place.
/// diag/off are the main and super/sub diagonal; rhs is overwritten with x.
inline void solve_tridiag_spd(std::vector<double> diag, const std::vector<double>& off,
                              std::vector<double>& rhs) {
  const std::size_t n = diag.size();
  if (n == 0) return;
  for (std::size_t i = 1; i < n; ++i) {
    const double m = off[i - 1] / diag[i - 1];
    diag[i] -= m * off[i - 1];
    rhs[i] -= m * rhs[i - 1];
  }
  rhs[n - 1] /= diag[n - 1];
  for (std::size_t i = n - 1; i-- > 0;) {
    rhs[i] = (rhs[i] - off[i] * rhs[i + 1]) / diag[i];
  }
}

/// Tridiagonal solve with partial pivoting (LAPACK gtsv-style); works for
/// indefinite matrices that show up in Newton corrections at saddle points.
/// lower[i] couples row i+1 to column i; upper[i] couples row i to column i+1.
inline void solve_tridiag_pivot(std::vector<double> lower, std::vector<double> diag,
                                std::vector<double> upper, std::vector<double>& rhs) {
  const std::size_t n = diag.size();
  if (n == 0) return;
  std::vector<double> upper2(n, 0.0);  // second superdiagonal created by pivoting
  for (std::size_t i = 0; i + 1 < n; ++i) {
    if (std::abs(lower[i]) > std::abs(diag[i])) {
      std::swap(diag[i], lower[i]);
      std::swap(upper[i], diag[i + 1]);
      if (i + 2 < n) std::swap(upper2[i], upper[i + 1]);
      std::swap(rhs[i], rhs[i + 1]);
    }
    if (diag[i] == 0.0) throw std::runtime_error("solve_tridiag_pivot: singular matrix");
    const double m = lower[i] / diag[i];
    diag[i + 1] -= m * upper[i];
    if (i + 2 < n) upper[i + 1] -= m * upper2[i];
    rhs[i + 1] -= m * rhs[i];
  }
  if (diag[n - 1] == 0.0) throw std::runtime_error("solve_tridiag_pivot: singular matrix");
  for (std::size_t i = n; i-- > 0;) {
    double s = rhs[i];
    if (i + 1 < n) s -= upper[i] * rhs[i + 1];
    if (i + 2 < n) s -= upper2[i] * rhs[i + 2];
    rhs[i] = s / diag[i];
  }
}

// ---------------------------------------------------------------------------
// General banded LU with partial pivoting (gbsv-lite). Row i holds entries
// for columns i-kl .. i+ku. Used by the coupled two-component Newton step.
// ---------------------------------------------------------------------------

class BandedMatrix {
 public:
  BandedMatrix(std::size_t n, int kl, int ku)
      : n_(n), kl_(kl), ku_(ku), width_(2 * kl + ku + 1), data_(n * width_, 0.0) {}

  double& at(std::size_t row, std::size_t col) { return entry(row, col); }

  /// LU factorization with partial pivoting; multipliers stored in the
  /// eliminated positions, so several right-hand sides can be solved after
  /// one factorization.
  void factor() {
    const int band = kl_ + ku_;
    piv_.assign(n_, 0);
    for (std::size_t k = 0; k < n_; ++k) {
      std::size_t p = k;
      double best = std::abs(entry(k, k));
      for (std::size_t r = k + 1; r < std::min(n_, k + kl_ + 1); ++r) {
        const double v = std::abs(entry(r, k));
        if (v > best) { best = v; p = r; }
      }
      if (best == 0.0) throw std::runtime_error("BandedMatrix::factor: singular matrix");
      piv_[k] = static_cast<int>(p);
      if (p != k) {
        for (std::size_t c = k; c < std::min(n_, k + band + 1); ++c)
          std::swap(entry(k, c), entry(p, c));
      }
      const double d = entry(k, k);
      for (std::size_t r = k + 1; r < std::min(n_, k + kl_ + 1); ++r) {
        const double m = entry(r, k) / d;
        entry(r, k) = m;  // store the multiplier
        if (m != 0.0) {
          for (std::size_t c = k + 1; c < std::min(n_, k + band + 1); ++c)
            entry(r, c) -= m * entry(k, c);
        }
      }
    }
    factored_ = true;
  }

  void solve(std::vector<double>& rhs) {
    if (!factored_) factor();
    const int band = kl_ + ku_;
    for (std::size_t k = 0; k < n_; ++k) {
      const std::size_t p = static_cast<std::size_t>(piv_[k]);
      if (p != k) std::swap(rhs[k], rhs[p]);
      for (std::size_t r = k + 1; r < std::min(n_, k + kl_ + 1); ++r)
        rhs[r] -= entry(r, k) * rhs[k];
    }
    for (std::size_t i = n_; i-- > 0;) {
      double s = rhs[i];
      for (std::size_t c = i + 1; c < std::min(n_, i + band + 1); ++c)
        s -= entry(i, c) * rhs[c];
      rhs[i] = s / entry(i, i);
    }
  }

 private:
  // Storage is re-indexed so fill-in from pivoting (up to kl extra upper bands) fits.
  double& entry(std::size_t row, std::size_t col) {
    const int offset = static_cast<int>(col) - static_cast<int>(row) + kl_ + ku_;
    return data_[row * width_ + static_cast<std::size_t>(offset)];
  }
  std::size_t n_;
  int kl_, ku_, width_;
  std::vector<double> data_;
  std::vector<int> piv_;
  bool factored_ = false;
};

// ---------------------------------------------------------------------------
// Monotone cubic (Fritsch–Carlson) interpolation. Preserves positivity and
// avoids ringing; all operations are exactly odd in the data.
// ---------------------------------------------------------------------------

class PchipInterpolant {
 public:
  PchipInterpolant(std::span<const double> x, std::span<const double> y)
      : x_(x.begin(), x.end()), y_(y.begin(), y.end()), m_(x.size(), 0.0) {
    const std::size_t n = x_.size();
    if (n < 2) throw std::invalid_argument("PchipInterpolant: need at least 2 points");
    std::vector<double> h(n - 1), d(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) {
      h[i] = x_[i + 1] - x_[i];
      d[i] = (y_[i + 1] - y_[i]) / h[i];
    }
    m_[0] = endpoint_slope(h[0], n > 2 ? h[1] : h[0], d[0], n > 2 ? d[1] : d[0]);
    m_[n - 1] = endpoint_slope(h[n - 2], n > 2 ? h[n - 3] : h[n - 2], d[n - 2],
                               n > 2 ? d[n - 3] : d[n - 2]);
    for (std::size_t i = 1; i + 1 < n; ++i) {
      // centered second-order slope, then a monotonicity limiter: full
      // accuracy on smooth data, no ringing near extrema
      const double c = (h[i] * d[i - 1] + h[i - 1] * d[i]) / (h[i - 1] + h[i]);
      if (d[i - 1] == 0.0 || d[i] == 0.0 || (d[i - 1] > 0) != (d[i] > 0)) {
        m_[i] = 0.0;
      } else {
        const double cap = 3.0 * std::min(std::abs(d[i - 1]), std::abs(d[i]));
        const double mag = std::min(std::abs(c), cap);
        m_[i] = c > 0 ? mag : -mag;
      }
    }
  }

  double operator()(double xq) const {
    if (xq <= x_.front()) return y_.front() + m_.front() * (xq - x_.front());
    if (xq >= x_.back()) return y_.back();
    const auto it = std::upper_bound(x_.begin(), x_.end(), xq);
    const std::size_t i = static_cast<std::size_t>(it - x_.begin()) - 1;
    const double h = x_[i + 1] - x_[i];
    const double t = (xq - x_[i]) / h;
    const double t2 = t * t, t3 = t2 * t;
    const double h00 = 2 * t3 - 3 * t2 + 1;
    const double h10 = t3 - 2 * t2 + t;
    const double h01 = -2 * t3 + 3 * t2;
    const double h11 = t3 - t2;
    return h00 * y_[i] + h10 * h * m_[i] + h01 * y_[i + 1] + h11 * h * m_[i + 1];
  }

  double derivative(double xq) const {
    if (xq <= x_.front()) return m_.front();
    if (xq >= x_.back()) return m_.back();
    const auto it = std::upper_bound(x_.begin(), x_.end(), xq);
    const std::size_t i = static_cast<std::size_t>(it - x_.begin()) - 1;
    const double h = x_[i + 1] - x_[i];
    const double t = (xq - x_[i]) / h;
    const double t2 = t * t;
    const double dh00 = (6 * t2 - 6 * t) / h;
    const double dh10 = 3 * t2 - 4 * t + 1;
    const double dh01 = (-6 * t2 + 6 * t) / h;
    const double dh11 = 3 * t2 - 2 * t;
    return dh00 * y_[i] + dh10 * m_[i] + dh01 * y_[i + 1] + dh11 * m_[i + 1];
  }

 private:
  static double endpoint_slope(double h0, double h1, double d0, double d1) {
    double m = ((2 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if (d0 == 0.0 || (m > 0) != (d0 > 0)) {
      m = 0.0;
    } else if ((d0 > 0) != (d1 > 0) && std::abs(m) > 3 * std::abs(d0)) {
      m = 3 * d0;
    }
    return m;
  }
  std::vector<double> x_, y_, m_;
};

// ---------------------------------------------------------------------------
// Deterministic random fields. std::normal_distribution is not bit-stable
// across standard libraries, so the Gaussian sampler is hand-rolled.
// ---------------------------------------------------------------------------

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

  std::uint64_t next_u64() {
    // xorshift64* — simple, portable, reproducible
    std::uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545f4914f6cdd1dull;
  }

  double uniform() {  // in (0,1)
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  double gaussian() {
    // Box–Muller, fully deterministic given the stream
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

 private:
  std::uint64_t state_;
};

// ---------------------------------------------------------------------------
// Parallel loop over independent indices (used for path/surface node sweeps).
// The worker count comes from POHOFLOW_THREADS, defaulting to the hardware.
// ---------------------------------------------------------------------------

inline unsigned thread_count() {
  if (const char* env = std::getenv("POHOFLOW_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<unsigned>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? hw : 1u;
}

inline void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body) {
  const unsigned workers = std::min<std::size_t>(thread_count(), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < count; i += workers) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

// ---------------------------------------------------------------------------
// Hashing and number formatting for reproducible artifacts
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(std::span<const char> bytes, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (const char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// 17 significant digits: round-trip exact for IEEE doubles.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace pohoflow
