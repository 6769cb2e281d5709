#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace stlt {

enum class Mechanism { stlt_streaming, stlt_windowed, naive_attention };

const char* mechanism_name(Mechanism m);
Mechanism parse_mechanism(const std::string& name);

struct BenchResult {
  Mechanism mechanism = Mechanism::stlt_streaming;
  std::size_t n = 0, s = 0, d = 0;
  double wall_time_ms = 0.0;   // median over repeats, monotonic clock
  std::size_t peak_bytes = 0;  // coefficient/score buffer allocations
};

struct BenchOptions {
  std::size_t s = 16;
  std::size_t d = 64;
  int repeats = 7;   // >= 5
  int warmups = 2;
  std::size_t budget_mb = 512;
  std::uint64_t seed = 7;
  double t_window = 32.0;  // rectangular support for the windowed mechanism
};

// Coefficient/score buffer footprint, checked against the budget before any
// allocation happens.
std::size_t estimate_peak_bytes(Mechanism m, std::size_t n, std::size_t s,
                                std::size_t d);

// Thrown when a requested size exceeds the memory budget.
struct BudgetExceeded : std::runtime_error {
  explicit BudgetExceeded(const std::string& what) : std::runtime_error(what) {}
};

// Times each mechanism single-threaded over ascending sequence lengths.
// stlt_streaming and stlt_windowed time the coefficient computation (the
// linear-time mixing primitive); naive_attention times a full quadratic
// score/softmax/value reference including its n x n buffer.
std::vector<BenchResult> bench_scaling(Mechanism m,
                                       const std::vector<std::size_t>& n_values,
                                       const BenchOptions& opt);

// Header exactly: mechanism,N,S,d,wall_time_ms,peak_bytes
void write_bench_csv(std::ostream& os, const std::vector<BenchResult>& rows);

// Log-log slope of wall time vs N.
double fit_time_slope(const std::vector<BenchResult>& rows);

}  // namespace stlt
