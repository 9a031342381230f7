#include "dempc/lookup.hpp"

#include "dempc/errors.hpp"

#include <algorithm>
#include <cmath>

namespace dempc {

namespace {

void check_axis(const std::vector<double>& axis, const char* name) {
  if (axis.empty()) throw StructuralError(std::string("lookup table axis '") + name + "' is empty");
  for (std::size_t i = 0; i < axis.size(); ++i) {
    if (!std::isfinite(axis[i]))
      throw StructuralError(std::string("lookup table axis '") + name + "' has a non-finite breakpoint");
    if (i > 0 && !(axis[i] > axis[i - 1]))
      throw StructuralError(std::string("lookup table axis '") + name + "' is not strictly increasing");
  }
}

// Segment index and weight of the upper breakpoint for a clamped query.
std::pair<std::size_t, double> locate(const std::vector<double>& axis, double q) {
  if (axis.size() == 1 || q <= axis.front()) return {0, 0.0};
  if (q >= axis.back()) return {axis.size() - 2, 1.0};
  auto it = std::upper_bound(axis.begin(), axis.end(), q);
  std::size_t hi = static_cast<std::size_t>(it - axis.begin());
  std::size_t lo = hi - 1;
  return {lo, (q - axis[lo]) / (axis[hi] - axis[lo])};
}

}  // namespace

void LookupTable2D::validate() const {
  check_axis(speed_axis, "speed");
  check_axis(fuel_axis, "fuel");
  if (values.size() != speed_axis.size() * fuel_axis.size())
    throw StructuralError("lookup table grid size does not match its axes");
}

double lut_query(const LookupTable2D& tbl, double n_e, double w_inj) {
  auto [i, ti] = locate(tbl.speed_axis, n_e);
  auto [j, tj] = locate(tbl.fuel_axis, w_inj);
  std::size_t i1 = tbl.speed_axis.size() > 1 ? i + 1 : i;
  std::size_t j1 = tbl.fuel_axis.size() > 1 ? j + 1 : j;
  double v00 = tbl.at(i, j), v01 = tbl.at(i, j1);
  double v10 = tbl.at(i1, j), v11 = tbl.at(i1, j1);
  double lo = v00 + tj * (v01 - v00);
  double hi = v10 + tj * (v11 - v10);
  return lo + ti * (hi - lo);
}

}  // namespace dempc
