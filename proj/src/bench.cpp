#include "stlt/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include "stlt/analysis.hpp"
#include "stlt/node_bank.hpp"
#include "stlt/rng.hpp"
#include "stlt/stlt_core.hpp"

namespace stlt {

const char* mechanism_name(Mechanism m) {
  switch (m) {
    case Mechanism::stlt_streaming: return "stlt_streaming";
    case Mechanism::stlt_windowed: return "stlt_windowed";
    case Mechanism::naive_attention: return "naive_attention";
  }
  return "?";
}

Mechanism parse_mechanism(const std::string& name) {
  if (name == "stlt_streaming") return Mechanism::stlt_streaming;
  if (name == "stlt_windowed") return Mechanism::stlt_windowed;
  if (name == "naive_attention") return Mechanism::naive_attention;
  throw std::invalid_argument("unknown mechanism " + name);
}

std::size_t estimate_peak_bytes(Mechanism m, std::size_t n, std::size_t s,
                                std::size_t d) {
  if (m == Mechanism::naive_attention) return n * n * sizeof(double);
  return n * s * d * 2 * sizeof(double);  // re + im coefficient planes
}

namespace {

double checksum(const std::vector<double>& v) {
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); i += 97) acc += v[i];
  return acc;
}

// Runs one repetition; returns a value depending on the result so the work
// cannot be optimized away.
double run_once(Mechanism m, const SequenceTensor& x, const LaplaceNodeBank& bank,
                double t_window) {
  switch (m) {
    case Mechanism::stlt_streaming: {
      const StltCoefficients c = stlt_streaming(x, bank, StltMode::bilateral);
      return checksum(c.re) + checksum(c.im);
    }
    case Mechanism::stlt_windowed: {
      const EffectiveParams eff = effective_params(bank);
      WindowSpec rect;
      rect.kind = WindowKind::rectangular;
      StltCoefficients c;
      stlt_direct_eff(x.v.data(), x.n, x.d, eff.sigma, eff.omega, t_window, rect,
                      bank.delta, StltMode::bilateral, &c);
      return checksum(c.re) + checksum(c.im);
    }
    case Mechanism::naive_attention: {
      const std::size_t n = x.n, d = x.d;
      std::vector<double> scores(n * n, 0.0);
      const double inv = 1.0 / std::sqrt(static_cast<double>(d));
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          double acc = 0.0;
          for (std::size_t e = 0; e < d; ++e) acc += x.at(i, e) * x.at(j, e);
          scores[i * n + j] = acc * inv;
        }
      std::vector<double> z(n * d, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        double* row = scores.data() + i * n;
        const double zmax = *std::max_element(row, row + n);
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          row[j] = std::exp(row[j] - zmax);
          acc += row[j];
        }
        for (std::size_t j = 0; j < n; ++j) {
          const double p = row[j] / acc;
          for (std::size_t e = 0; e < d; ++e) z[i * d + e] += p * x.at(j, e);
        }
      }
      return checksum(scores) + checksum(z);
    }
  }
  return 0.0;
}

}  // namespace

std::vector<BenchResult> bench_scaling(Mechanism m,
                                       const std::vector<std::size_t>& n_values,
                                       const BenchOptions& opt) {
  if (opt.repeats < 5) throw std::invalid_argument("bench: need >= 5 repeats");
  for (std::size_t i = 1; i < n_values.size(); ++i)
    if (n_values[i] <= n_values[i - 1])
      throw std::invalid_argument("bench: N values must ascend");
  for (std::size_t n : n_values) {
    const std::size_t bytes = estimate_peak_bytes(m, n, opt.s, opt.d);
    if (bytes > opt.budget_mb * (1ULL << 20))
      throw BudgetExceeded(std::string(mechanism_name(m)) + " at N=" +
                           std::to_string(n) + " needs " + std::to_string(bytes) +
                           " bytes, over the " + std::to_string(opt.budget_mb) +
                           " MiB budget");
  }

  std::vector<BenchResult> rows;
  volatile double sink = 0.0;
  for (std::size_t n : n_values) {
    Rng rng(substream(opt.seed, 0xbe, n));
    SequenceTensor x(n, opt.d);
    for (double& e : x.v) e = rng.normal();
    const LaplaceNodeBank bank =
        init_bank(opt.s, 0.02, 2.0, 1.0, opt.t_window, 1.0, opt.seed);

    for (int w = 0; w < opt.warmups; ++w) sink = sink + run_once(m, x, bank, opt.t_window);
    std::vector<double> times;
    for (int r = 0; r < opt.repeats; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      sink = sink + run_once(m, x, bank, opt.t_window);
      const auto t1 = std::chrono::steady_clock::now();
      times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    std::sort(times.begin(), times.end());
    BenchResult row;
    row.mechanism = m;
    row.n = n;
    row.s = opt.s;
    row.d = opt.d;
    row.wall_time_ms = times[times.size() / 2];
    row.peak_bytes = estimate_peak_bytes(m, n, opt.s, opt.d);
    rows.push_back(row);
  }
  return rows;
}

void write_bench_csv(std::ostream& os, const std::vector<BenchResult>& rows) {
  os << "mechanism,N,S,d,wall_time_ms,peak_bytes\n";
  for (const BenchResult& r : rows)
    os << mechanism_name(r.mechanism) << ',' << r.n << ',' << r.s << ',' << r.d
       << ',' << r.wall_time_ms << ',' << r.peak_bytes << '\n';
}

double fit_time_slope(const std::vector<BenchResult>& rows) {
  std::vector<double> xs, ys;
  for (const BenchResult& r : rows) {
    xs.push_back(std::log(static_cast<double>(r.n)));
    ys.push_back(std::log(r.wall_time_ms));
  }
  return fit_line(xs, ys).slope;
}

}  // namespace stlt
