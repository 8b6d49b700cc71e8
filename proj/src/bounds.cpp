#include "plab/bounds.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>

#include "plab/parallel.hpp"
#include "plab/rng.hpp"

namespace plab {

void BoundInputs::validate() const {
  if (n < 1) throw std::invalid_argument("bound inputs: N must be >= 1");
  if (alpha < 0.0 || alpha >= 1.0) throw std::invalid_argument("bound inputs: need 0 <= alpha < 1");
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("bound inputs: need 0 < delta < 1");
  if (lambda < 1.0) throw std::invalid_argument("bound inputs: lambda must be >= 1");
  if (epsilon < 0.0 || tau < 0.0) throw std::invalid_argument("bound inputs: negative condition value");
  if (emp_error < 0.0 || emp_risk < 0.0) throw std::invalid_argument("bound inputs: negative risk");
  if (rad_neq < 0.0 || rad_eq < 0.0) throw std::invalid_argument("bound inputs: negative capacity term");
  if (!(eta_frac > 0.0 && eta_frac < 1.0)) throw std::invalid_argument("bound inputs: need 0 < eta < 1");
}

nlohmann::json BoundReport::to_json() const {
  nlohmann::json j;
  for (const auto& [k, v] : terms) j["terms"][k] = v;
  j["total"] = total;
  for (const auto& [k, v] : extras) j["extras"][k] = v;
  j["flags"] = flags;
  return j;
}

double BoundReport::term(const std::string& name) const {
  for (const auto& [k, v] : terms)
    if (k == name) return v;
  throw std::out_of_range("bound report has no term " + name);
}

namespace {

void finish(BoundReport& r) {
  double t = 0.0;
  for (const auto& [k, v] : r.terms) t += v;
  r.total = t;
}

}  // namespace

double clean_bound_coefficient(double alpha) {
  if (alpha < 0.0 || alpha >= 1.0) throw std::invalid_argument("coefficient: need 0 <= alpha < 1");
  return (4.0 - 2.0 * alpha) / (1.0 - alpha);
}

BoundReport clean_bound_rhs(const BoundInputs& in) {
  if (in.alpha >= 1.0) throw std::invalid_argument("clean bound: alpha = 1 is degenerate");
  if (in.delta >= 2.0) throw std::invalid_argument("clean bound: delta >= 2 has no confidence content");
  BoundInputs checked = in;
  checked.validate();
  const double coeff = clean_bound_coefficient(in.alpha);
  BoundReport r;
  r.terms.emplace_back("empirical", coeff * in.emp_error);
  r.terms.emplace_back("rad_not_target", 4.0 * in.rad_neq);
  r.terms.emplace_back("rad_target", 4.0 / (1.0 - in.alpha) * in.rad_eq);
  r.terms.emplace_back("concentration",
                       2.0 * std::sqrt(std::log(2.0 / in.delta) /
                                       (static_cast<double>(in.n) * (1.0 - in.alpha))));
  finish(r);
  r.extras.emplace_back("coefficient", coeff);
  r.extras.emplace_back("c_scale", in.c_scale);
  r.flags.emplace_back("bound-shape-not-certified-constant");
  return r;
}

BoundReport poison_bound_rhs(const BoundInputs& in, double rad, PoisonBoundForm form) {
  in.validate();
  if (rad < 0.0) throw std::invalid_argument("poison bound: negative capacity term");
  const double ae = in.alpha * in.eta_frac;
  if (!(ae > 0.0)) throw std::invalid_argument("poison bound: alpha * eta must be > 0");
  const double conc = std::sqrt(std::log(2.0 / in.delta) / (static_cast<double>(in.n) * ae));
  BoundReport r;
  if (form == PoisonBoundForm::kValue) {
    const double l = in.lambda;
    r.terms.emplace_back("empirical", l * 2.0 * in.emp_error / ae);
    r.terms.emplace_back("rad", l * 2.0 * rad);
    r.terms.emplace_back("concentration", l * conc);
    r.terms.emplace_back("tau_over_eta", l * in.tau / in.eta_frac);
    r.terms.emplace_back("epsilon", l * in.epsilon);
    r.terms.emplace_back("tau", in.tau);
    r.terms.emplace_back("lambda_excess", (in.lambda - 1.0) * in.eta_frac);
  } else {
    const double l2 = 2.0 * in.lambda;
    r.terms.emplace_back("empirical", l2 * 2.0 * in.emp_risk / ae);
    r.terms.emplace_back("rad", l2 * 4.0 * rad / ae);
    r.terms.emplace_back("concentration", l2 * conc);
    r.terms.emplace_back("tau_over_eta", l2 * in.tau / in.eta_frac);
    r.terms.emplace_back("epsilon", l2 * in.epsilon);
    r.terms.emplace_back("tau", 2.0 * in.tau);
    r.terms.emplace_back("lambda_excess", 2.0 * (in.lambda - 1.0) * in.eta_frac);
  }
  finish(r);
  r.extras.emplace_back("c_scale", in.c_scale);
  r.flags.emplace_back("bound-shape-not-certified-constant");
  return r;
}

double vc_rad_bound(int width, int depth, int classes, std::int64_t n, double c_scale) {
  if (width < 1 || depth < 1 || classes < 1 || n < 1)
    throw std::invalid_argument("vc_rad_bound: counts must be >= 1");
  return c_scale * std::sqrt(static_cast<double>(classes) * width * width * depth * depth /
                             static_cast<double>(n));
}

double covering_rad_bound(int width, int depth, double a_norm, int classes, int input_dim,
                          std::int64_t n, double c_scale) {
  if (width < 1 || depth < 1 || classes < 1 || input_dim < 1 || n < 1)
    throw std::invalid_argument("covering_rad_bound: counts must be >= 1");
  const double admn = a_norm * depth * classes * input_dim;
  if (admn < std::exp(1.0)) throw std::invalid_argument("covering_rad_bound: A*D*m*n must be >= e");
  return c_scale * width * depth * std::log(admn) / std::sqrt(static_cast<double>(n));
}

GapProbability gap_probability_exact(std::int64_t n, double c, double k) {
  if (n < 1) throw std::invalid_argument("gap probability: N must be >= 1");
  if (!(c > 0.0)) throw std::invalid_argument("gap probability: c must be > 0");
  if (!(k > 0.0)) throw std::invalid_argument("gap probability: k must be > 0");
  GapProbability out;
  out.k_below_half = k <= 0.5;

  const double center = static_cast<double>(n) / 2.0;
  const double width = c * std::pow(static_cast<double>(n), 1.0 - k);
  // Strictly inside the open interval (center - width, center + width).
  std::int64_t lo = static_cast<std::int64_t>(std::floor(center - width)) + 1;
  std::int64_t hi = static_cast<std::int64_t>(std::ceil(center + width)) - 1;
  lo = std::max<std::int64_t>(lo, 0);
  hi = std::min<std::int64_t>(hi, n);
  if (lo > hi) return out;

  if (n <= 62) {
    // C(62,31) < 2^63; the division by 2^N is then exact in binary.
    double mass = 0.0;
    for (std::int64_t i = lo; i <= hi; ++i) {
      unsigned long long comb = 1;
      for (std::int64_t j = 0; j < std::min(i, n - i); ++j)
        comb = comb * static_cast<unsigned long long>(n - j) / static_cast<unsigned long long>(j + 1);
      mass += std::ldexp(static_cast<double>(comb), -static_cast<int>(n));
    }
    out.probability = mass;
    return out;
  }
  double mass = 0.0;
  const double logn2 = static_cast<double>(n) * std::log(2.0);
  for (std::int64_t i = lo; i <= hi; ++i) {
    const double lc = std::lgamma(static_cast<double>(n) + 1.0) -
                      std::lgamma(static_cast<double>(i) + 1.0) -
                      std::lgamma(static_cast<double>(n - i) + 1.0);
    mass += std::exp(lc - logn2);
  }
  out.probability = mass;
  return out;
}

namespace {

void check_values(const std::vector<std::vector<double>>& hv) {
  if (hv.empty()) throw std::invalid_argument("rademacher: empty hypothesis class");
  const std::size_t k = hv.front().size();
  if (k == 0) throw std::invalid_argument("rademacher: no samples");
  for (const auto& row : hv) {
    if (row.size() != k) throw std::invalid_argument("rademacher: ragged value matrix");
    for (double v : row)
      if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("rademacher: values must lie in [0,1]");
  }
}

double sup_for_signs(const std::vector<std::vector<double>>& hv, const std::vector<int>& sigma) {
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& row : hv) {
    double s = 0.0;
    for (std::size_t i = 0; i < row.size(); ++i) s += sigma[i] * row[i];
    best = std::max(best, s);
  }
  return best;
}

}  // namespace

RademacherEstimate empirical_rademacher(const std::vector<std::vector<double>>& hypothesis_values,
                                        int num_sigma, std::uint64_t seed, int enum_limit_k) {
  check_values(hypothesis_values);
  const int k = static_cast<int>(hypothesis_values.front().size());
  const std::size_t h = hypothesis_values.size();

  RademacherEstimate est;
  if (k <= enum_limit_k) {
    // Gray-code walk over all 2^k sign vectors; flipping one sample adjusts
    // every hypothesis sum by +-2*h(x_i).
    std::vector<double> sums(h, 0.0);
    for (std::size_t r = 0; r < h; ++r)
      for (int i = 0; i < k; ++i) sums[r] += hypothesis_values[r][static_cast<std::size_t>(i)];
    std::vector<int> sigma(static_cast<std::size_t>(k), 1);
    const std::uint64_t count = std::uint64_t{1} << k;
    double acc = 0.0;
    for (std::uint64_t step = 0;; ++step) {
      double best = -std::numeric_limits<double>::infinity();
      for (double s : sums) best = std::max(best, s);
      acc += best;
      if (step + 1 == count) break;
      const int bit = std::countr_zero(step + 1);
      const int flip_to = sigma[static_cast<std::size_t>(bit)] > 0 ? -1 : 1;
      sigma[static_cast<std::size_t>(bit)] = flip_to;
      for (std::size_t r = 0; r < h; ++r)
        sums[r] += 2.0 * flip_to * hypothesis_values[r][static_cast<std::size_t>(bit)];
    }
    est.value = acc / static_cast<double>(count) / k;
    est.exact = true;
    est.num_sigma = 0;
    return est;
  }

  if (num_sigma < 2) throw std::invalid_argument("rademacher: need at least 2 Monte-Carlo draws");
  std::vector<double> draws(static_cast<std::size_t>(num_sigma));
  Rng base(seed);
  parallel_for(num_sigma, [&](int s) {
    Rng rng = base.split(static_cast<std::uint64_t>(s));
    std::vector<int> sigma(static_cast<std::size_t>(k));
    for (auto& v : sigma) v = rng.bernoulli(0.5) ? 1 : -1;
    draws[static_cast<std::size_t>(s)] = sup_for_signs(hypothesis_values, sigma) / k;
  });
  double mean = 0.0;
  for (double v : draws) mean += v;
  mean /= num_sigma;
  double var = 0.0;
  for (double v : draws) var += (v - mean) * (v - mean);
  var /= static_cast<double>(num_sigma - 1);
  est.value = mean;
  est.stderr_ = std::sqrt(var / num_sigma);
  est.exact = false;
  est.num_sigma = num_sigma;
  return est;
}

}  // namespace plab
