#pragma once

#include <vector>

namespace dempc {

/// Values on a rectangular (n_e, w_inj) grid, row-major by n_e.
struct LookupTable2D {
  std::vector<double> speed_axis;  // rpm, strictly increasing
  std::vector<double> fuel_axis;   // mg/stroke, strictly increasing
  std::vector<double> values;      // speed_axis.size() * fuel_axis.size()

  double at(std::size_t i_speed, std::size_t i_fuel) const {
    return values[i_speed * fuel_axis.size() + i_fuel];
  }
  double& at(std::size_t i_speed, std::size_t i_fuel) {
    return values[i_speed * fuel_axis.size() + i_fuel];
  }

  /// Throws StructuralError on non-increasing axes or a size mismatch.
  void validate() const;
};

/// Bilinear interpolation, clamped to the table hull.
double lut_query(const LookupTable2D& tbl, double n_e, double w_inj);

}  // namespace dempc
