#pragma once

#include <cmath>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "flatner/common.hpp"
#include "flatner/params.hpp"

namespace flatner {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_fd = 0.0;
  bool has_nan = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;

  double max_rel_err() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_err);
    return m;
  }

  bool has_nan() const {
    for (const auto& e : entries)
      if (e.has_nan) return true;
    return false;
  }

  bool pass(double tol) const { return !has_nan() && max_rel_err() <= tol; }

  std::string render() const {
    std::ostringstream os;
    os << std::scientific << std::setprecision(3);
    for (const auto& e : entries) {
      os << e.name << "  max_rel_err=" << e.max_rel_err << "  analytic=" << e.worst_analytic
         << "  fd=" << e.worst_fd << "  at=" << e.worst_index;
      if (e.has_nan) os << "  NAN";
      os << "\n";
    }
    os << "overall max_rel_err=" << max_rel_err() << (has_nan() ? "  NAN" : "") << "\n";
    return os.str();
  }
};

// Relative error with a floored denominator so near-zero gradients compare on
// an absolute scale instead of blowing up the ratio.
inline double grad_rel_err(double analytic, double fd) {
  return std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-4});
}

// Central-difference check of analytic gradients against a pure loss
// evaluator. Perturbs a copy of the parameters, one scalar at a time, so the
// evaluator must read everything it needs from the store it is handed.
template <typename T>
GradCheckReport grad_check(const ParamStore<T>& params, const ParamStore<T>& analytic,
                           const std::function<double(const ParamStore<T>&)>& loss,
                           double step = 1e-5) {
  require(step > 0.0, cat("grad_check: step must be positive, got ", step));
  require(analytic.count() == params.count(),
          cat("grad_check: ", analytic.count(), " gradient tensors for ", params.count(),
              " params"));
  GradCheckReport report;
  ParamStore<T> work = params;
  for (const auto& e : params.entries()) {
    const Array<T>& a = analytic.get(e.first);
    require(a.same_shape(e.second), cat("grad_check: gradient shape ", shape_str(a.shape()),
                                        " does not match param ", e.first));
    GradCheckEntry entry;
    entry.name = e.first;
    Array<T>& w = work.get(e.first);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const T keep = w[i];
      w[i] = keep + T(step);
      const double up = loss(work);
      w[i] = keep - T(step);
      const double down = loss(work);
      w[i] = keep;
      const double fd = (up - down) / (2.0 * step);
      const double an = static_cast<double>(a[i]);
      if (!std::isfinite(an) || !std::isfinite(fd)) {
        entry.has_nan = true;
        entry.worst_index = i;
        entry.worst_analytic = an;
        entry.worst_fd = fd;
        continue;
      }
      const double rel = grad_rel_err(an, fd);
      if (rel >= entry.max_rel_err) {
        entry.max_rel_err = rel;
        entry.worst_index = i;
        entry.worst_analytic = an;
        entry.worst_fd = fd;
      }
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace flatner
