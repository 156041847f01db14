#pragma once

// Shared test utilities and independent oracles. Everything here is kept
// deliberately naive and separate from the library implementation so the
// tests check against a second route, not against the code under test.

#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "sceval/records.hpp"
#include "sceval/simcore.hpp"

namespace testutil {

// --- random recordings -------------------------------------------------------

inline sceval::records::Recording random_recording(std::mt19937& rng) {
  using namespace sceval::records;
  std::uniform_int_distribution<int> nch_d(1, 6);
  std::uniform_int_distribution<int> nsamp_d(1, 3000);
  std::uniform_int_distribution<int> rate_d(0, 2);
  std::uniform_real_distribution<double> val_d(-1e3, 1e3);
  std::uniform_int_distribution<int> unit_d(0, 1);
  std::uniform_int_distribution<int> phase_d(0, 3);
  std::uniform_int_distribution<int> idlen_d(3, 12);
  std::uniform_int_distribution<int> ch_d(0, 61);

  auto rand_name = [&](const std::string& prefix) {
    static const char alphabet[] =
        "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
    std::string s = prefix;
    int len = idlen_d(rng);
    for (int i = 0; i < len; ++i) s += alphabet[static_cast<std::size_t>(ch_d(rng))];
    return s;
  };

  Recording rec;
  rec.station_id = rand_name("ST_");
  rec.sample_rate = std::vector<double>{9600.0, 4800.0, 960.0}[static_cast<std::size_t>(rate_d(rng))];
  rec.n_samples = static_cast<std::size_t>(nsamp_d(rng));
  int nch = nch_d(rng);
  for (int c = 0; c < nch; ++c) {
    AnalogChannel ch;
    ch.name = rand_name("CH" + std::to_string(c) + "_");
    ch.unit = unit_d(rng) == 0 ? Unit::kV : Unit::kA;
    ch.phase = static_cast<PhaseTag>(phase_d(rng));
    ch.values.resize(rec.n_samples);
    for (auto& v : ch.values) v = val_d(rng);
    rec.channels.push_back(std::move(ch));
  }
  return rec;
}

// --- naive windowed DFT oracle ----------------------------------------------

// Direct trigonometric evaluation over one-cycle trailing windows; no tables,
// no sliding updates.
inline std::vector<sceval::records::Phasor> naive_phasors(const std::vector<double>& x,
                                                          double sample_rate,
                                                          double fundamental_hz) {
  const auto cycle = static_cast<std::size_t>(std::llround(sample_rate / fundamental_hz));
  std::vector<sceval::records::Phasor> out;
  if (x.size() < cycle) return out;
  const double w = 2.0 * std::numbers::pi * fundamental_hz;
  for (std::size_t end = cycle - 1; end < x.size(); ++end) {
    std::complex<double> acc{0.0, 0.0};
    for (std::size_t m = end + 1 - cycle; m <= end; ++m) {
      double t = static_cast<double>(m) / sample_rate;
      acc += x[m] * std::complex<double>(std::cos(w * t), -std::sin(w * t));
    }
    acc *= std::numbers::sqrt2 / static_cast<double>(cycle);
    out.push_back(sceval::records::Phasor::from_complex(acc));
  }
  return out;
}

// --- symmetrical components oracle --------------------------------------------

inline std::complex<double> naive_positive_sequence(std::complex<double> a,
                                                    std::complex<double> b,
                                                    std::complex<double> c) {
  const std::complex<double> op = std::polar(1.0, 2.0 * std::numbers::pi / 3.0);
  return (a + op * b + op * op * c) / 3.0;
}

// --- adaptive Cash-Karp RK45 ---------------------------------------------------

using OdeRhs = std::function<std::vector<double>(double, const std::vector<double>&)>;

// Integrates y' = f(t, y) from t0 to t1, returning y(t1). Step size adapts to
// the given relative tolerance.
inline std::vector<double> rk45_integrate(const OdeRhs& f, std::vector<double> y,
                                          double t0, double t1, double rel_tol = 1e-9) {
  static const double a2 = 0.2, a3 = 0.3, a4 = 0.6, a5 = 1.0, a6 = 0.875;
  static const double b21 = 0.2;
  static const double b31 = 3.0 / 40.0, b32 = 9.0 / 40.0;
  static const double b41 = 0.3, b42 = -0.9, b43 = 1.2;
  static const double b51 = -11.0 / 54.0, b52 = 2.5, b53 = -70.0 / 27.0, b54 = 35.0 / 27.0;
  static const double b61 = 1631.0 / 55296.0, b62 = 175.0 / 512.0, b63 = 575.0 / 13824.0,
                      b64 = 44275.0 / 110592.0, b65 = 253.0 / 4096.0;
  static const double c1 = 37.0 / 378.0, c3 = 250.0 / 621.0, c4 = 125.0 / 594.0,
                      c6 = 512.0 / 1771.0;
  static const double d1 = c1 - 2825.0 / 27648.0, d3 = c3 - 18575.0 / 48384.0,
                      d4 = c4 - 13525.0 / 55296.0, d5 = -277.0 / 14336.0,
                      d6 = c6 - 0.25;

  const std::size_t dim = y.size();
  double t = t0;
  double h = (t1 - t0) / 1000.0;
  auto axpy = [&](const std::vector<double>& base, double hh,
                  std::initializer_list<std::pair<double, const std::vector<double>*>> terms) {
    std::vector<double> out = base;
    for (auto& [coef, k] : terms)
      for (std::size_t i = 0; i < dim; ++i) out[i] += hh * coef * (*k)[i];
    return out;
  };

  while (t < t1) {
    if (t + h > t1) h = t1 - t;
    auto k1 = f(t, y);
    auto k2 = f(t + a2 * h, axpy(y, h, {{b21, &k1}}));
    auto k3 = f(t + a3 * h, axpy(y, h, {{b31, &k1}, {b32, &k2}}));
    auto k4 = f(t + a4 * h, axpy(y, h, {{b41, &k1}, {b42, &k2}, {b43, &k3}}));
    auto k5 = f(t + a5 * h, axpy(y, h, {{b51, &k1}, {b52, &k2}, {b53, &k3}, {b54, &k4}}));
    auto k6 = f(t + a6 * h,
                axpy(y, h, {{b61, &k1}, {b62, &k2}, {b63, &k3}, {b64, &k4}, {b65, &k5}}));

    double err = 0.0, scale = 1e-10;
    std::vector<double> y5(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      y5[i] = y[i] + h * (c1 * k1[i] + c3 * k3[i] + c4 * k4[i] + c6 * k6[i]);
      double e = h * (d1 * k1[i] + d3 * k3[i] + d4 * k4[i] + d5 * k5[i] + d6 * k6[i]);
      err = std::max(err, std::abs(e));
      scale = std::max(scale, std::abs(y5[i]));
    }
    double tol = rel_tol * scale;
    if (err <= tol || h < 1e-12) {
      t += h;
      y = std::move(y5);
      if (err > 0.0) h *= std::min(5.0, 0.9 * std::pow(tol / err, 0.2));
    } else {
      h *= std::max(0.1, 0.9 * std::pow(tol / err, 0.25));
    }
  }
  return y;
}

// --- independent least squares (unscaled normal equations) --------------------

inline std::vector<double> naive_polyfit(const std::vector<double>& xs,
                                         const std::vector<double>& ys, int degree) {
  const auto m = static_cast<std::size_t>(degree) + 1;
  std::vector<std::vector<double>> ata(m, std::vector<double>(m, 0.0));
  std::vector<double> atb(m, 0.0);
  for (std::size_t r = 0; r < xs.size(); ++r) {
    std::vector<double> pw(m, 1.0);
    for (std::size_t k = 1; k < m; ++k) pw[k] = pw[k - 1] * xs[r];
    for (std::size_t a = 0; a < m; ++a) {
      atb[a] += pw[a] * ys[r];
      for (std::size_t b = 0; b < m; ++b) ata[a][b] += pw[a] * pw[b];
    }
  }
  for (std::size_t col = 0; col < m; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < m; ++r)
      if (std::abs(ata[r][col]) > std::abs(ata[piv][col])) piv = r;
    std::swap(ata[col], ata[piv]);
    std::swap(atb[col], atb[piv]);
    for (std::size_t r = 0; r < m; ++r) {
      if (r == col) continue;
      double f = ata[r][col] / ata[col][col];
      for (std::size_t c = 0; c < m; ++c) ata[r][c] -= f * ata[col][c];
      atb[r] -= f * atb[col];
    }
  }
  std::vector<double> coeffs(m);
  for (std::size_t k = 0; k < m; ++k) coeffs[k] = atb[k] / ata[k][k];
  return coeffs;
}

inline double polyval(const std::vector<double>& coeffs, double x) {
  double acc = 0.0;
  for (std::size_t k = coeffs.size(); k-- > 0;) acc = acc * x + coeffs[k];
  return acc;
}

// --- step-response measurements -----------------------------------------------

struct StepStats {
  double settle_s = 0.0;    // last time the trace left the 5% band around final
  double overshoot = 0.0;   // peak past the final value, as a fraction of the swing
  double final_value = 0.0;
};

inline StepStats step_stats(const std::vector<double>& t, const std::vector<double>& q,
                            double initial_value) {
  StepStats st;
  std::size_t tail = std::max<std::size_t>(1, q.size() / 20);
  double final_sum = 0.0;
  for (std::size_t i = q.size() - tail; i < q.size(); ++i) final_sum += q[i];
  st.final_value = final_sum / static_cast<double>(tail);

  const double swing = st.final_value - initial_value;
  const double band = 0.05 * std::abs(swing);
  st.settle_s = t.front();
  for (std::size_t i = 0; i < q.size(); ++i)
    if (std::abs(q[i] - st.final_value) > band) st.settle_s = t[i];

  double peak = 0.0;
  for (double v : q) {
    double past = (swing >= 0.0) ? v - st.final_value : st.final_value - v;
    peak = std::max(peak, past);
  }
  st.overshoot = std::abs(swing) > 1e-12 ? peak / std::abs(swing) : 0.0;
  return st;
}

inline double nrmse_of(const std::vector<double>& ref, const std::vector<double>& x) {
  double ss = 0.0, peak = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    ss += (x[i] - ref[i]) * (x[i] - ref[i]);
    peak = std::max(peak, std::abs(ref[i]));
  }
  return std::sqrt(ss / static_cast<double>(ref.size())) / peak;
}

}  // namespace testutil
