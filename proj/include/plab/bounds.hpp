#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace plab {

/// Everything the bound evaluators consume. `c_scale` stands in for the
/// hidden constants of the asymptotic statements and defaults to 1; every
/// report produced from it carries a bound-shape flag.
struct BoundInputs {
  std::int64_t n = 1;      // training-set size
  double alpha = 0.0;      // poisoned fraction of the target class
  double eta_frac = 0.5;   // prior mass of the target class
  double delta = 0.05;     // confidence parameter
  double lambda = 1.0;     // trigger-similarity ratio
  double epsilon = 0.0;    // adversarial condition value
  double tau = 0.0;        // response-gap condition value
  double emp_error = 0.0;  // empirical error on the poisoned set
  double emp_risk = 0.0;   // empirical cross-entropy risk on the poisoned set
  double rad_neq = 0.0;    // capacity term over the non-target subdistribution
  double rad_eq = 0.0;     // capacity term over the target subdistribution
  double c_scale = 1.0;

  void validate() const;
};

struct BoundReport {
  std::vector<std::pair<std::string, double>> terms;
  double total = 0.0;
  std::vector<std::pair<std::string, double>> extras;
  std::vector<std::string> flags;

  nlohmann::json to_json() const;
  double term(const std::string& name) const;
};

/// RHS of the clean-accuracy bound:
///   (4-2a)/(1-a) * emp + 4*rad_neq + 4/(1-a)*rad_eq + 2*sqrt(ln(2/d)/(N(1-a))).
/// Rejects alpha = 1 and delta >= 2.
BoundReport clean_bound_rhs(const BoundInputs& in);

double clean_bound_coefficient(double alpha);  // (4-2a)/(1-a)

/// kValue bounds the expected hypothesis value under the trigger
/// distribution; kError bounds the triggered misclassification probability.
enum class PoisonBoundForm { kValue, kError };

/// RHS of the triggered-error bound. The value form is
///   l*(2*emp/(a*eta) + 2*rad + sqrt(ln(2/d)/(N*a*eta)) + t/eta + e)
///     + t + (l-1)*eta
/// with emp the empirical error; the error form doubles the outer scale,
/// uses the cross-entropy risk for emp, and weights the capacity term
/// 4/(a*eta) (it is stated at the full sample count).
BoundReport poison_bound_rhs(const BoundInputs& in, double rad, PoisonBoundForm form);

/// Width/depth capacity shape: c * sqrt(m * W^2 * D^2 / N).
double vc_rad_bound(int width, int depth, int classes, std::int64_t n, double c_scale);

/// Norm-bounded capacity shape: c * W * D * ln(A*D*m*n_dim) / sqrt(N).
/// Requires A*D*m*n_dim >= e.
double covering_rad_bound(int width, int depth, double a_norm, int classes, int input_dim,
                          std::int64_t n, double c_scale);

struct GapProbability {
  double probability = 0.0;
  bool k_below_half = false;  // outside the proposition's regime, flagged
};

/// Exact P(|0.5 - N1/N| < c/N^k) for N1 ~ Binomial(N, 1/2): the binomial
/// mass on the open interval (N/2 - c*N^(1-k), N/2 + c*N^(1-k)). Exact
/// integer binomials for N <= 62 (then the division by 2^N is exact in
/// binary floating point); log-gamma summation above that.
GapProbability gap_probability_exact(std::int64_t n, double c, double k);

struct RademacherEstimate {
  double value = 0.0;
  double stderr_ = 0.0;
  bool exact = false;
  int num_sigma = 0;
};

/// Empirical Rademacher average of a finite class given by its value matrix
/// (one row per hypothesis, one column per sample, entries in [0,1]):
/// E_sigma [ sup_h (1/k) sum_i sigma_i h(x_i) ]. Full 2^k enumeration when
/// k <= enum_limit_k (Gray-code walk), otherwise a seeded Monte-Carlo
/// average over num_sigma sign vectors with a per-vector derived seed.
RademacherEstimate empirical_rademacher(const std::vector<std::vector<double>>& hypothesis_values,
                                        int num_sigma, std::uint64_t seed, int enum_limit_k = 20);

}  // namespace plab
