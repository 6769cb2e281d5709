#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "stlt/checkpoint.hpp"
#include "stlt/mixer.hpp"
#include "stlt/train.hpp"

namespace stlt {

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
};

// Least squares y = slope*x + intercept.
SlopeFit fit_line(const std::vector<double>& xs, const std::vector<double>& ys);

enum class TestSignal { decaying_sine, gaussian_pulse, step };
TestSignal parse_test_signal(const std::string& name);

// Truncated Bromwich inversion of the signal's closed-form transform via an
// S-point trapezoid rule on [gamma - jB, gamma + jB], evaluated on the
// signal's reference time grid.
struct ErrorBoundReport {
  TestSignal signal = TestSignal::decaying_sine;
  double b = 0.0;       // contour half-height
  double gamma = 0.0;   // contour abscissa
  int s = 0;            // quadrature node count
  double p_fitted = 0.0;
  double t_window = 0.0;
  double sigma_min = 0.0;
  double e_trunc = 0.0;  // dense quadrature vs exact signal
  double e_quad = 0.0;   // S points vs 64x denser rule, same contour
  double e_win = 0.0;    // not exercised by the inversion experiment
  double e_total = 0.0;  // S points vs exact signal
};

ErrorBoundReport laplace_inversion_experiment(TestSignal signal, int s, double b,
                                              double gamma);

// max_t |reconstruction(S points) - reconstruction(64S points)| per S.
std::vector<double> inversion_quad_errors(TestSignal signal,
                                          const std::vector<int>& s_values,
                                          double b, double gamma);
// Fitted algebraic order p from E_quad = O(S^-p).
double fit_quadrature_order(TestSignal signal, const std::vector<int>& s_values,
                            double b, double gamma);

// max_t |reconstruction(dense, B) - exact| per B, fixed dense quadrature step.
std::vector<double> inversion_trunc_errors(TestSignal signal,
                                           const std::vector<double>& b_values,
                                           double gamma);

// AR(1) sequence with exponentially decaying autocovariance, the probe signal
// for the window cutoff law.
SequenceTensor make_ar1_sequence(std::uint64_t seed, std::size_t n, std::size_t d,
                                 double rho);

struct WindowCutoffResult {
  std::vector<double> t_values;
  std::vector<double> errors;  // max |L_full - L_rect(T)| over (n, k, i)
  double slope = 0.0;          // fit of ln(error) vs T
  double sigma_min = 0.0;
};

// Full-support vs rectangular-window STLT coefficient error as a function of
// the window bandwidth T.
WindowCutoffResult window_cutoff_experiment(const SequenceTensor& x,
                                            const LaplaceNodeBank& bank,
                                            const std::vector<double>& t_values);

// Spectral norm by power iteration on M^T M.
double operator_norm(const std::vector<double>& m, std::size_t rows,
                     std::size_t cols, int iters = 20, double tol = 1e-6);

struct PerturbRow {
  double eps = 0.0;
  double r_norm = 0.0;      // operator norm of the injected perturbation
  double delta_loss = 0.0;  // loss(R + dR) - loss(R)
  double ratio = 0.0;       // |delta_loss| / r_norm (0 when r_norm = 0)
};

// Injects perturbations of operator norm eps into one decoder layer's
// relevance matrix, along the loss-gradient direction, and measures the loss
// response.
std::vector<PerturbRow> relevance_perturbation(ModelParams& params,
                                               const std::vector<int>& tokens,
                                               const std::vector<int>& targets,
                                               const std::vector<double>& eps_levels,
                                               int layer, double lambda_t);

// One CSV row per (layer, node), sorted by layer then effective sigma:
// layer,node,sigma,omega,t_half,alpha,m_tilde,T,s_eff. alpha is the gate's
// input-free score sigmoid(b_alpha); m_tilde is its deterministic relaxation
// at the checkpoint temperature.
void dump_params_csv(const Checkpoint& ck, std::ostream& os);

}  // namespace stlt
