#ifndef CSILOC_PROBMAP_HPP
#define CSILOC_PROBMAP_HPP

#include <array>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <vector>

#include "csiloc/errors.hpp"

// Grid geometry, reference probability maps, position extraction with
// covariance, and Gaussian conflation. All double precision, D = 2.

namespace csiloc {

using Vec2 = std::array<double, 2>;
using Mat2 = std::array<std::array<double, 2>, 2>;

struct PositionEstimate {
    Vec2 x{0, 0};
    Mat2 cov{{{0, 0}, {0, 0}}};
};

// Uniformly spaced rows x cols grid. Point k (row-major: k = row*cols + col)
// sits at (x0 + col*dx, y0 + row*dy). Bilinear reference maps need at least a
// 2x2 grid.
struct Grid {
    int rows = 0;
    int cols = 0;
    double x0 = 0, y0 = 0;
    double dx = 0, dy = 0;

    Grid() = default;
    Grid(int rows_, int cols_, double x0_, double y0_, double dx_, double dy_)
        : rows(rows_), cols(cols_), x0(x0_), y0(y0_), dx(dx_), dy(dy_) {
        if (rows < 2 || cols < 2) throw ConfigError("grid: needs at least 2x2 points");
        if (!(dx > 0) || !(dy > 0)) throw ConfigError("grid: spacing must be positive");
    }

    // Points at cell centers of a rows x cols partition of [0,width]x[0,height]:
    // spacing width/cols, first point half a cell in.
    static Grid cell_centered(double width, double height, int rows, int cols) {
        if (!(width > 0) || !(height > 0)) throw ConfigError("grid: area must be positive");
        const double dx = width / cols, dy = height / rows;
        return Grid(rows, cols, dx / 2, dy / 2, dx, dy);
    }

    int num_points() const { return rows * cols; }

    Vec2 point(int k) const {
        const int r = k / cols, c = k % cols;
        return {x0 + c * dx, y0 + r * dy};
    }

    // Convex hull of the grid points; reference maps exist exactly here.
    double min_x() const { return x0; }
    double max_x() const { return x0 + (cols - 1) * dx; }
    double min_y() const { return y0; }
    double max_y() const { return y0 + (rows - 1) * dy; }

    bool contains(const Vec2 &p) const {
        return p[0] >= min_x() && p[0] <= max_x() && p[1] >= min_y() && p[1] <= max_y();
    }
};

using ProbMap = std::vector<double>;

inline bool is_valid_map(const ProbMap &p, double tol = 1e-6) {
    double s = 0;
    for (double v : p) {
        if (!(v >= 0.0 && v <= 1.0 + tol) || !std::isfinite(v)) return false;
        s += v;
    }
    return std::abs(s - 1.0) <= tol;
}

// Bilinear weights on the four corners of the enclosing cell; the expected
// position under the map equals x. Cells are half-open with the top/right
// boundary folded into the last cell, so edge positions degenerate to 2 (or 1)
// active corners.
inline ProbMap reference_map(const Vec2 &x, const Grid &grid) {
    if (!grid.contains(x))
        throw DomainError("reference_map: position outside the grid hull");
    const double u = (x[0] - grid.x0) / grid.dx;
    const double v = (x[1] - grid.y0) / grid.dy;
    int cx = static_cast<int>(std::floor(u));
    int cy = static_cast<int>(std::floor(v));
    cx = std::min(std::max(cx, 0), grid.cols - 2);
    cy = std::min(std::max(cy, 0), grid.rows - 2);
    const double fx = u - cx, fy = v - cy;
    ProbMap p(static_cast<std::size_t>(grid.num_points()), 0.0);
    const auto idx = [&](int row, int col) { return static_cast<std::size_t>(row) * grid.cols + col; };
    p[idx(cy, cx)] = (1 - fx) * (1 - fy);
    p[idx(cy, cx + 1)] = fx * (1 - fy);
    p[idx(cy + 1, cx)] = (1 - fx) * fy;
    p[idx(cy + 1, cx + 1)] = fx * fy;
    return p;
}

// Expectation over grid points plus the second-moment covariance.
inline PositionEstimate extract_position(const ProbMap &p, const Grid &grid) {
    if (static_cast<int>(p.size()) != grid.num_points())
        throw DimensionError("extract_position: map length does not match grid");
    PositionEstimate est;
    for (int k = 0; k < grid.num_points(); ++k) {
        const Vec2 g = grid.point(k);
        est.x[0] += p[k] * g[0];
        est.x[1] += p[k] * g[1];
    }
    for (int k = 0; k < grid.num_points(); ++k) {
        const Vec2 g = grid.point(k);
        const double d0 = g[0] - est.x[0], d1 = g[1] - est.x[1];
        est.cov[0][0] += p[k] * d0 * d0;
        est.cov[0][1] += p[k] * d0 * d1;
        est.cov[1][0] += p[k] * d1 * d0;
        est.cov[1][1] += p[k] * d1 * d1;
    }
    return est;
}

// Per-dimension inverse-variance-weighted average. Diagonal covariance
// entries are floored so a perfectly confident estimate dominates without a
// division by zero.
inline PositionEstimate conflate(const std::vector<PositionEstimate> &estimates,
                                 double variance_floor = 1e-9) {
    if (estimates.empty()) throw ContractError("conflate: empty estimate list");
    if (estimates.size() == 1) return estimates[0]; // exact identity on one input
    PositionEstimate out;
    for (int d = 0; d < 2; ++d) {
        double num = 0, den = 0;
        for (const auto &e : estimates) {
            const double var = std::max(e.cov[d][d], variance_floor);
            num += e.x[d] / var;
            den += 1.0 / var;
        }
        out.x[d] = num / den;
        out.cov[d][d] = 1.0 / den;
    }
    return out;
}

// CSV export: one "k,gx,gy,p" row per grid point.
inline void export_map_csv(std::ostream &os, const ProbMap &p, const Grid &grid) {
    os << "k,gx,gy,p\n";
    for (int k = 0; k < grid.num_points(); ++k) {
        const Vec2 g = grid.point(k);
        char buf[96];
        std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g\n", k, g[0], g[1], p[k]);
        os << buf;
    }
}

} // namespace csiloc

#endif
