#pragma once

// Derivative-free downhill simplex minimizer.

#include <Eigen/Dense>

#include <algorithm>
#include <functional>
#include <numeric>
#include <vector>

namespace relloc {

struct NelderMeadOptions {
  double reflection{1.0};
  double expansion{2.0};
  double contraction{0.5};
  double shrink{0.5};
  double initial_step{0.5};
  double f_tolerance{1e-14};
  double x_tolerance{1e-12};
  int max_iterations{20000};
};

struct NelderMeadResult {
  Eigen::VectorXd x;
  double value{0.0};
  int iterations{0};
  bool converged{false};
};

inline NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                                    const Eigen::VectorXd& start, const NelderMeadOptions& opt = {}) {
  const Eigen::Index n = start.size();
  std::vector<Eigen::VectorXd> simplex(static_cast<std::size_t>(n + 1), start);
  for (Eigen::Index i = 0; i < n; ++i) {
    simplex[static_cast<std::size_t>(i + 1)](i) += opt.initial_step;
  }
  std::vector<double> values(simplex.size());
  for (std::size_t i = 0; i < simplex.size(); ++i) values[i] = f(simplex[i]);

  std::vector<std::size_t> order(simplex.size());
  NelderMeadResult result;
  for (int it = 0; it < opt.max_iterations; ++it) {
    result.iterations = it + 1;
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    const std::size_t best = order.front();
    const std::size_t worst = order.back();
    const std::size_t second_worst = order[order.size() - 2];

    double spread = 0.0;
    for (const auto& v : simplex) spread = std::max(spread, (v - simplex[best]).cwiseAbs().maxCoeff());
    if (values[worst] - values[best] <= opt.f_tolerance && spread <= opt.x_tolerance) {
      result.converged = true;
      break;
    }
    if (values[best] <= opt.f_tolerance) {
      result.converged = true;
      break;
    }

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (std::size_t i = 0; i < simplex.size(); ++i) {
      if (i != worst) centroid += simplex[i];
    }
    centroid /= static_cast<double>(n);

    const Eigen::VectorXd reflected = centroid + opt.reflection * (centroid - simplex[worst]);
    const double f_reflected = f(reflected);

    if (f_reflected < values[best]) {
      const Eigen::VectorXd expanded = centroid + opt.expansion * (reflected - centroid);
      const double f_expanded = f(expanded);
      if (f_expanded < f_reflected) {
        simplex[worst] = expanded;
        values[worst] = f_expanded;
      } else {
        simplex[worst] = reflected;
        values[worst] = f_reflected;
      }
      continue;
    }
    if (f_reflected < values[second_worst]) {
      simplex[worst] = reflected;
      values[worst] = f_reflected;
      continue;
    }

    const bool outside = f_reflected < values[worst];
    const Eigen::VectorXd contracted = outside ? Eigen::VectorXd(centroid + opt.contraction * (reflected - centroid))
                                               : Eigen::VectorXd(centroid + opt.contraction * (simplex[worst] - centroid));
    const double f_contracted = f(contracted);
    if (f_contracted < std::min(f_reflected, values[worst])) {
      simplex[worst] = contracted;
      values[worst] = f_contracted;
      continue;
    }

    for (std::size_t i = 0; i < simplex.size(); ++i) {
      if (i == best) continue;
      simplex[i] = simplex[best] + opt.shrink * (simplex[i] - simplex[best]);
      values[i] = f(simplex[i]);
    }
  }

  const auto best_it = std::min_element(values.begin(), values.end());
  const auto idx = static_cast<std::size_t>(std::distance(values.begin(), best_it));
  result.x = simplex[idx];
  result.value = values[idx];
  return result;
}

}  // namespace relloc
