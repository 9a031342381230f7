#pragma once

#include "dempc/nn.hpp"

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

namespace testing {

/// |a - b| <= max(rel * |b|, abs_floor)
inline bool close(double a, double b, double rel, double abs_floor) {
  return std::abs(a - b) <= std::max(rel * std::abs(b), abs_floor);
}

/// Central difference of f at x along coordinate i, step h * max(1, |x_i|).
inline double central_diff(const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd x,
                           Eigen::Index i, double h = 1e-6) {
  const double step = h * std::max(1.0, std::abs(x(i)));
  const double x0 = x(i);
  x(i) = x0 + step;
  const double fp = f(x);
  x(i) = x0 - step;
  const double fm = f(x);
  return (fp - fm) / (2 * step);
}

/// Network with random normalization records so the physical-unit paths are exercised.
inline dempc::NnParams random_network(Eigen::Index in, const std::vector<dempc::LayerSpec>& arch, std::uint64_t seed,
                                      bool random_norm = true) {
  dempc::NnParams p = dempc::init_params(in, arch, seed);
  if (!random_norm) return p;
  std::mt19937_64 rng(seed + 1000);
  std::uniform_real_distribution<double> u(0.5, 2.0), o(-1.0, 1.0);
  for (Eigen::Index i = 0; i < in; ++i) {
    p.input_norm.offset(i) = o(rng);
    p.input_norm.scale(i) = u(rng);
  }
  for (Eigen::Index i = 0; i < p.output_dim(); ++i) {
    p.output_norm.offset(i) = o(rng);
    p.output_norm.scale(i) = u(rng);
  }
  return p;
}

inline Eigen::VectorXd random_vector(Eigen::Index n, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = u(rng);
  return v;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("dempc-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
