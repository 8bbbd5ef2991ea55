#include "graphdyn/trajectory.hpp"

#include <cmath>

#include "graphdyn/errors.hpp"

namespace graphdyn {

std::vector<double> sample_times(double t0, double t1, std::size_t count) {
  if (count < 2) throw ParamError("need at least two sample times");
  std::vector<double> t(count);
  const double span = t1 - t0;
  for (std::size_t k = 0; k < count; ++k) {
    t[k] = t0 + span * static_cast<double>(k) / static_cast<double>(count - 1);
  }
  t.back() = t1;
  return t;
}

void Trajectory::validate() const {
  if (nodes == 0 || features == 0) throw ShapeError("trajectory has no nodes or features");
  if (states.size() != times.size() * stride()) {
    throw ShapeError("trajectory holds " + std::to_string(states.size()) + " values, expected " +
                     std::to_string(times.size() * stride()));
  }
  if (times.size() >= 2) {
    const double h = times[1] - times[0];
    if (!(h > 0)) throw FormatError("sample times must increase", 0);
    for (std::size_t k = 1; k < times.size(); ++k) {
      const double hk = times[k] - times[k - 1];
      if (!(std::abs(hk - h) <= 1e-9 * std::abs(h) + 4e-16 * std::abs(times[k]))) {
        throw FormatError("sample times are not regularly spaced", k);
      }
    }
  }
  for (double v : states) {
    if (!std::isfinite(v)) throw FormatError("trajectory contains a non-finite state", 0);
  }
}

}  // namespace graphdyn
