// Regular 1D/2D grids: cell centers, binning, coordinate normalization.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lgp {

struct Interval {
  double lo = 0.0;
  double hi = 1.0;
};

// Per-dimension affine map x -> (x - shift) / scale.
struct AffineMap {
  Eigen::VectorXd shift;
  Eigen::VectorXd scale;
};

// Regular grid over a bounded region. Cells tile [lo, hi] per dimension with
// equal widths; the flat cell index is row-major in dimension 0, i.e.
// index = i0 * m1 + i1 in 2D. Immutable after construction.
class Grid {
 public:
  int dims = 1;
  std::vector<Interval> bounds;
  std::vector<int> m_per_dim;
  Eigen::MatrixXd centers;   // m x dims, original units
  double cell_volume = 1.0;  // uniform across cells
  AffineMap norm_transform;  // normalizes centers to mean 0, variance 1

  int size() const { return static_cast<int>(centers.rows()); }

  double width(int dim) const {
    return (bounds[dim].hi - bounds[dim].lo) / m_per_dim[dim];
  }

  Eigen::MatrixXd normalized_centers() const {
    Eigen::MatrixXd out = centers;
    for (int k = 0; k < dims; ++k) {
      out.col(k) = (out.col(k).array() - norm_transform.shift(k)) /
                   norm_transform.scale(k);
    }
    return out;
  }

  Eigen::MatrixXd unnormalize(const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd out = x;
    for (int k = 0; k < dims; ++k) {
      out.col(k) = out.col(k).array() * norm_transform.scale(k) +
                   norm_transform.shift(k);
    }
    return out;
  }

  // Flat index of the cell containing x; half-open cells, closed last cell.
  // Returns -1 when x lies outside the bounds.
  int cell_index(const Eigen::VectorXd& x) const {
    int flat = 0;
    for (int k = 0; k < dims; ++k) {
      const double lo = bounds[k].lo, hi = bounds[k].hi;
      const double v = x(k);
      if (v < lo || v > hi) return -1;
      int idx;
      if (v == hi) {
        idx = m_per_dim[k] - 1;
      } else {
        idx = static_cast<int>(std::floor((v - lo) / width(k)));
        if (idx >= m_per_dim[k]) idx = m_per_dim[k] - 1;
        if (idx < 0) idx = 0;
      }
      flat = flat * m_per_dim[k] + idx;
    }
    return flat;
  }
};

struct BinnedData {
  Eigen::VectorXi counts;   // per-cell counts y
  long n = 0;               // total count
  Eigen::MatrixXd points;   // retained source points (for cross-validation)
};

inline Grid build_grid(const std::vector<Interval>& bounds,
                       const std::vector<int>& m_per_dim) {
  if (bounds.empty() || bounds.size() > 2 || bounds.size() != m_per_dim.size())
    throw std::invalid_argument("build_grid: need 1 or 2 dims with matching m");
  Grid g;
  g.dims = static_cast<int>(bounds.size());
  g.bounds = bounds;
  g.m_per_dim = m_per_dim;
  g.cell_volume = 1.0;
  long m = 1;
  for (int k = 0; k < g.dims; ++k) {
    if (!(bounds[k].lo < bounds[k].hi))
      throw std::invalid_argument("build_grid: degenerate interval (lo >= hi)");
    if (m_per_dim[k] < 2)
      throw std::invalid_argument("build_grid: need at least 2 cells per dim");
    m *= m_per_dim[k];
    g.cell_volume *= (bounds[k].hi - bounds[k].lo) / m_per_dim[k];
  }
  g.centers.resize(m, g.dims);
  for (long i = 0; i < m; ++i) {
    long rem = i;
    for (int k = g.dims - 1; k >= 0; --k) {
      const long idx = rem % m_per_dim[k];
      rem /= m_per_dim[k];
      g.centers(i, k) = bounds[k].lo + (idx + 0.5) * g.width(k);
    }
  }
  g.norm_transform.shift.resize(g.dims);
  g.norm_transform.scale.resize(g.dims);
  for (int k = 0; k < g.dims; ++k) {
    const double mean = g.centers.col(k).mean();
    const double var =
        (g.centers.col(k).array() - mean).square().sum() / static_cast<double>(m);
    g.norm_transform.shift(k) = mean;
    g.norm_transform.scale(k) = std::sqrt(var);
  }
  return g;
}

inline BinnedData bin_data(const Grid& grid, const Eigen::MatrixXd& points) {
  if (points.cols() != grid.dims)
    throw std::invalid_argument("bin_data: point dimension mismatch");
  BinnedData out;
  out.counts = Eigen::VectorXi::Zero(grid.size());
  std::vector<long> outside;
  for (long i = 0; i < points.rows(); ++i) {
    const int cell = grid.cell_index(points.row(i).transpose());
    if (cell < 0) {
      outside.push_back(i);
      continue;
    }
    out.counts(cell) += 1;
  }
  if (!outside.empty()) {
    std::ostringstream msg;
    msg << "bin_data: " << outside.size() << " point(s) outside bounds at row(s)";
    for (size_t j = 0; j < outside.size() && j < 20; ++j) msg << ' ' << outside[j];
    if (outside.size() > 20) msg << " ...";
    throw std::invalid_argument(msg.str());
  }
  out.n = points.rows();
  out.points = points;
  return out;
}

inline std::vector<Interval> default_bounds(const Eigen::MatrixXd& points,
                                            double pad = 0.1) {
  if (points.rows() < 2)
    throw std::invalid_argument("default_bounds: need at least 2 points");
  std::vector<Interval> out(points.cols());
  for (int k = 0; k < points.cols(); ++k) {
    const double lo = points.col(k).minCoeff();
    const double hi = points.col(k).maxCoeff();
    const double range = hi - lo;
    if (range <= 0.0)
      throw std::invalid_argument("default_bounds: zero range in dimension " +
                                  std::to_string(k));
    out[k] = {lo - pad * range, hi + pad * range};
  }
  return out;
}

}  // namespace lgp
