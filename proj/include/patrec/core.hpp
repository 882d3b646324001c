#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace patrec {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid arguments, inconsistent shapes, malformed files. Maps to CLI exit code 2.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Divergence, breakdown or non-finite intermediate values. Maps to CLI exit code 3.
class NumericalError : public Error {
public:
    using Error::Error;
};

inline void require(bool cond, const std::string& what)
{
    if (!cond) throw ValidationError(what);
}

struct Point2 {
    double x = 0.0;
    double y = 0.0;

    friend Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
    friend Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
    friend Point2 operator*(double s, Point2 a) { return {s * a.x, s * a.y}; }
    friend bool operator==(Point2, Point2) = default;
};

inline double norm(Point2 p) { return std::hypot(p.x, p.y); }

/// Square pixel grid of d×d cells covering [-1,1]². Pixel centers sit at
/// -1 + (i + 1/2)·Δx so the grid is symmetric about the origin.
class Grid {
public:
    explicit Grid(int d) : d_(d)
    {
        require(d >= 8, "Grid: d must be at least 8, got " + std::to_string(d));
    }

    int size() const { return d_; }
    std::size_t pixel_count() const { return static_cast<std::size_t>(d_) * d_; }
    double spacing() const { return 2.0 / d_; }
    double center(int i) const { return -1.0 + (i + 0.5) * spacing(); }

    friend bool operator==(const Grid&, const Grid&) = default;

private:
    int d_;
};

/// Circular detection geometry: M detectors on the circle of radius R,
/// Nt time samples t_k = k·T/(Nt-1) including both endpoints.
class Geometry {
public:
    Geometry(double radius, int detectors, double final_time, int time_samples)
        : radius_(radius), detectors_(detectors), final_time_(final_time), time_samples_(time_samples)
    {
        require(std::isfinite(radius) && radius > 0.0, "Geometry: R must be positive");
        require(detectors >= 3, "Geometry: M must be at least 3");
        require(std::isfinite(final_time) && final_time >= 2.0 * radius * (1.0 - 1e-12),
                "Geometry: T must be at least 2R");
        require(time_samples >= 2, "Geometry: Nt must be at least 2");
    }

    double radius() const { return radius_; }
    int detectors() const { return detectors_; }
    double final_time() const { return final_time_; }
    int time_samples() const { return time_samples_; }
    double time_step() const { return final_time_ / (time_samples_ - 1); }
    double time(int k) const { return k * time_step(); }

    friend bool operator==(const Geometry&, const Geometry&) = default;

private:
    double radius_;
    int detectors_;
    double final_time_;
    int time_samples_;
};

/// z_m = R (cos 2π(m-1)/M, sin 2π(m-1)/M), returned zero-based.
inline std::vector<Point2> detector_positions(const Geometry& g)
{
    std::vector<Point2> z(g.detectors());
    for (int m = 0; m < g.detectors(); ++m) {
        const double phi = 2.0 * std::numbers::pi * m / g.detectors();
        z[m] = {g.radius() * std::cos(phi), g.radius() * std::sin(phi)};
    }
    return z;
}

/// d×d image, row-major with row index along y and column index along x.
class Image {
public:
    explicit Image(Grid grid) : grid_(grid), values_(grid.pixel_count(), 0.0) {}
    Image(Grid grid, std::vector<double> values) : grid_(grid), values_(std::move(values))
    {
        require(values_.size() == grid_.pixel_count(), "Image: value count does not match grid");
    }

    const Grid& grid() const { return grid_; }
    int size() const { return grid_.size(); }

    double& at(int iy, int ix) { return values_[static_cast<std::size_t>(iy) * grid_.size() + ix]; }
    double at(int iy, int ix) const { return values_[static_cast<std::size_t>(iy) * grid_.size() + ix]; }

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }
    std::vector<double>& raw() { return values_; }
    const std::vector<double>& raw() const { return values_; }

    bool all_finite() const
    {
        for (double v : values_)
            if (!std::isfinite(v)) return false;
        return true;
    }

private:
    Grid grid_;
    std::vector<double> values_;
};

/// Detector signals p[m, k] stored row-major, one row per detector.
class PressureData {
public:
    explicit PressureData(Geometry geometry)
        : geometry_(geometry),
          values_(static_cast<std::size_t>(geometry.detectors()) * geometry.time_samples(), 0.0)
    {}
    PressureData(Geometry geometry, std::vector<double> values)
        : geometry_(geometry), values_(std::move(values))
    {
        require(values_.size() == static_cast<std::size_t>(geometry_.detectors()) * geometry_.time_samples(),
                "PressureData: value count does not match geometry");
    }

    const Geometry& geometry() const { return geometry_; }

    std::span<double> row(int m)
    {
        return {values_.data() + static_cast<std::size_t>(m) * geometry_.time_samples(),
                static_cast<std::size_t>(geometry_.time_samples())};
    }
    std::span<const double> row(int m) const
    {
        return {values_.data() + static_cast<std::size_t>(m) * geometry_.time_samples(),
                static_cast<std::size_t>(geometry_.time_samples())};
    }

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }
    std::vector<double>& raw() { return values_; }
    const std::vector<double>& raw() const { return values_; }

    bool all_finite() const
    {
        for (double v : values_)
            if (!std::isfinite(v)) return false;
        return true;
    }

private:
    Geometry geometry_;
    std::vector<double> values_;
};

inline double dot(std::span<const double> a, std::span<const double> b)
{
    require(a.size() == b.size(), "dot: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// ‖recon - truth‖₂ / ‖truth‖₂. Zero-norm truth is rejected.
inline double rel_l2_error(const Image& recon, const Image& truth)
{
    require(recon.grid() == truth.grid(), "rel_l2_error: grid mismatch");
    double num = 0.0;
    double den = 0.0;
    const auto r = recon.values();
    const auto t = truth.values();
    for (std::size_t i = 0; i < r.size(); ++i) {
        const double e = r[i] - t[i];
        num += e * e;
        den += t[i] * t[i];
    }
    require(den > 0.0, "rel_l2_error: ground truth has zero norm");
    return std::sqrt(num) / std::sqrt(den);
}

}  // namespace patrec
