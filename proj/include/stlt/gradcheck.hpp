#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace stlt {

struct GradCheckGroup {
  std::string name;
  double max_rel = 0.0;
  double mean_rel = 0.0;
  std::size_t count = 0;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  double max_rel = 0.0;
  double h_base = 1e-4;
  int models = 0;
};

// Central differences with per-coordinate step h_i = h_base * max(1, |theta_i|).
// `f` must be deterministic in theta (stochastic masks frozen by seed).
std::vector<double> finite_diff_oracle(
    const std::function<double(const std::vector<double>&)>& f,
    const std::vector<double>& theta, double h_base = 1e-4);

// |ga - gf| / max(|ga|, |gf|, 1e-8).
double rel_error(double analytic, double fd);

// Full-model check: analytic gradients of the training objective on random
// tiny models (n=8, d=8, s_max=4, frozen stochastic masks) against the
// finite-difference oracle, aggregated per parameter group.
GradCheckReport gradcheck_tiny_models(int n_models, std::uint64_t seed);

void print_gradcheck(const GradCheckReport& report, std::ostream& os);

}  // namespace stlt
