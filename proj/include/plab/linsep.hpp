#pragma once

#include <optional>
#include <vector>

namespace plab {

/// Affine separator h(x) = w.x + c with a unit-L2 normal.
struct LinearWitness {
  std::vector<double> w;
  double c = 0.0;

  double operator()(const std::vector<double>& x) const;
  double linear(const std::vector<double>& x) const;  // w.x without the offset
};

struct MarginSeparation {
  bool separable = false;
  std::optional<LinearWitness> witness;
  double achieved_margin = 0.0;  // min_0 w.x - max_1 w.x for the witness direction
  int iterations = 0;
};

/// Decides whether a unit-normal direction w separates class0 from class1
/// with geometric gap >= required_margin, i.e. min_{class0} w.x - max_{class1}
/// w.x >= required_margin. This equals asking whether the distance between
/// the two convex hulls reaches required_margin, so the search runs a
/// min-norm-point pass over the Minkowski difference (Gilbert / Frank-Wolfe)
/// and stops on the first certificate in either direction: a direction whose
/// separation reaches the margin, or a hull point whose norm falls below it.
MarginSeparation check_margin_separable(const std::vector<std::vector<double>>& class0,
                                        const std::vector<std::vector<double>>& class1,
                                        double required_margin, int max_iterations = 20000);

}  // namespace plab
