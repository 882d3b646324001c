#pragma once

#include <cmath>
#include <cstdint>
#include <iostream>
#include <numbers>
#include <vector>

#include "patrec/core.hpp"
#include "patrec/parallel.hpp"
#include "patrec/phantoms.hpp"
#include "patrec/rng.hpp"

namespace patrec {

/// Discretization of the wave solution formula.
struct ForwardConfig {
    int angular_samples = 512;  // Nφ, points per circle
    int radial_samples = 600;   // Nr, radii in [0, T]; also the number of Abel quadrature nodes
    int analytic_oversampling = 5;  // radial refinement when simulating analytic phantoms

    int analytic_radial_samples() const { return (radial_samples - 1) * analytic_oversampling + 1; }

    void validate(const Geometry& g) const
    {
        require(angular_samples >= 64, "ForwardConfig: angular_samples must be at least 64");
        require(radial_samples >= g.time_samples(), "ForwardConfig: radial_samples must be at least Nt");
        require(analytic_oversampling >= 1, "ForwardConfig: analytic_oversampling must be at least 1");
    }

    friend bool operator==(const ForwardConfig&, const ForwardConfig&) = default;
};

/// Time derivative on the sample grid: central differences in the interior,
/// one-sided at both ends. Shared by the simulator and the FBP filter.
inline void time_derivative(std::span<const double> f, std::span<double> out, double dt)
{
    const std::size_t n = f.size();
    out[0] = (f[1] - f[0]) / dt;
    for (std::size_t k = 1; k + 1 < n; ++k) out[k] = (f[k + 1] - f[k - 1]) / (2.0 * dt);
    out[n - 1] = (f[n - 1] - f[n - 2]) / dt;
}

/// The photoacoustic forward map for a circular detector array.
///
/// Pressure is computed from circular means m(z, r) of the source:
///
///     p(z, t) = d/dt ∫₀ᵗ r m(z, r) / √(t² − r²) dr
///             = d/dt ∫₀^{π/2} t sin(u) m(z, t sin u) du
///
/// The u-integral uses an Nr-node midpoint rule with m linearly interpolated
/// on an Nr-point radial grid over [0, T]; the derivative uses
/// time_derivative(). Everything after the circular means is one Nt×Nr
/// matrix shared by all detectors. On pixel images the means are Nφ-point
/// angular sums of the bilinear interpolant, so apply_forward is linear and
/// apply_adjoint is its exact transpose.
///
/// Analytic phantoms have circular means with square-root kinks at tangent
/// radii, which linear interpolation resolves only at O(Δr^1.5). Their data
/// are therefore computed on a radial grid refined by analytic_oversampling.
class WaveOperator {
public:
    WaveOperator(Grid grid, Geometry geometry, ForwardConfig config = {})
        : grid_(grid), geometry_(geometry), config_(config), detectors_(detector_positions(geometry))
    {
        config_.validate(geometry_);
        build_radial_kernel(config_.radial_samples, kernel_, kernel_extent_);
        build_radial_kernel(config_.analytic_radial_samples(), fine_kernel_, fine_extent_);
        const int nphi = config_.angular_samples;
        cos_.resize(nphi);
        sin_.resize(nphi);
        for (int l = 0; l < nphi; ++l) {
            const double phi = 2.0 * std::numbers::pi * l / nphi;
            cos_[l] = std::cos(phi);
            sin_[l] = std::sin(phi);
        }
    }

    const Grid& grid() const { return grid_; }
    const Geometry& geometry() const { return geometry_; }
    const ForwardConfig& config() const { return config_; }
    int radial_samples() const { return config_.radial_samples; }
    double radial_step() const { return geometry_.final_time() / (config_.radial_samples - 1); }
    double radius_at(int j) const { return j * radial_step(); }

    /// Nt×Nr matrix, row-major, mapping a row of circular means to a pressure row.
    const std::vector<double>& radial_kernel() const { return kernel_; }

    // --- linear operator on pixel images ---------------------------------

    PressureData apply_forward(const Image& image) const
    {
        require(image.grid() == grid_, "apply_forward: image grid does not match operator");
        return means_to_pressure(image_means(image));
    }

    Image apply_adjoint(const PressureData& data) const
    {
        require(data.geometry() == geometry_, "apply_adjoint: geometry does not match operator");
        return image_means_adjoint(pressure_to_means_adjoint(data));
    }

    // --- data simulation -------------------------------------------------

    /// Pressure of a pixel image (same map as apply_forward, with input checks).
    PressureData simulate(const Image& image) const
    {
        require(image.all_finite(), "simulate: source contains non-finite values");
        warn_if_outside(image);
        return apply_forward(image);
    }

    /// Pressure of an analytic phantom; circular means are exact arc fractions.
    PressureData simulate(const Phantom& phantom) const
    {
        for (const auto& e : phantom.ellipses)
            require(std::isfinite(e.center.x) && std::isfinite(e.center.y) && std::isfinite(e.a) &&
                        std::isfinite(e.b) && std::isfinite(e.angle) && std::isfinite(e.intensity),
                    "simulate: phantom contains non-finite parameters");
        if (phantom.outer_radius() >= geometry_.radius())
            std::clog << "warning: phantom support extends beyond the detection circle\n";

        const int M = geometry_.detectors();
        const int nr = config_.analytic_radial_samples();
        const double dr = geometry_.final_time() / (nr - 1);
        std::vector<double> means(static_cast<std::size_t>(M) * nr, 0.0);
        parallel_for(M, [&](std::int64_t m) {
            for (int j = 0; j < nr; ++j)
                means[m * nr + j] = circular_mean(phantom, detectors_[m], j * dr, config_.angular_samples);
        });
        return apply_kernel(means, nr, fine_kernel_, fine_extent_);
    }

    // --- building blocks, exposed for tests --------------------------------

    /// M×Nr circular means of the bilinear interpolant of the image.
    std::vector<double> image_means(const Image& image) const
    {
        const int M = geometry_.detectors();
        const int nr = config_.radial_samples;
        const auto y = image.values();
        std::vector<double> means(static_cast<std::size_t>(M) * nr, 0.0);
        const double inv = 1.0 / config_.angular_samples;
        parallel_for(M, [&](std::int64_t m) {
            for (int j = 0; j < nr; ++j) {
                double s = 0.0;
                for_each_circle_sample(static_cast<int>(m), j, [&](std::size_t idx, double w) { s += w * y[idx]; });
                means[m * nr + j] = s * inv;
            }
        });
        return means;
    }

    /// Transpose of image_means.
    Image image_means_adjoint(const std::vector<double>& means) const
    {
        const int M = geometry_.detectors();
        const int nr = config_.radial_samples;
        const std::size_t npx = grid_.pixel_count();
        const double inv = 1.0 / config_.angular_samples;
        // one buffer per detector, summed in detector order afterwards
        std::vector<double> partial(static_cast<std::size_t>(M) * npx, 0.0);
        parallel_for(M, [&](std::int64_t m) {
            double* buf = partial.data() + m * npx;
            for (int j = 0; j < nr; ++j) {
                const double v = means[m * nr + j] * inv;
                if (v == 0.0) continue;
                for_each_circle_sample(static_cast<int>(m), j, [&](std::size_t idx, double w) { buf[idx] += w * v; });
            }
        });
        Image out(grid_);
        auto o = out.values();
        for (int m = 0; m < M; ++m) {
            const double* buf = partial.data() + static_cast<std::size_t>(m) * npx;
            for (std::size_t i = 0; i < npx; ++i) o[i] += buf[i];
        }
        return out;
    }

    PressureData means_to_pressure(const std::vector<double>& means) const
    {
        return apply_kernel(means, config_.radial_samples, kernel_, kernel_extent_);
    }

    std::vector<double> pressure_to_means_adjoint(const PressureData& p) const
    {
        const int M = geometry_.detectors();
        const int nt = geometry_.time_samples();
        const int nr = config_.radial_samples;
        std::vector<double> means(static_cast<std::size_t>(M) * nr, 0.0);
        parallel_for(M, [&](std::int64_t m) {
            double* row = means.data() + m * nr;
            const auto in = p.row(static_cast<int>(m));
            for (int k = 0; k < nt; ++k) {
                const double* kr = kernel_.data() + static_cast<std::size_t>(k) * nr;
                const double v = in[k];
                for (int j = 0; j < kernel_extent_[k]; ++j) row[j] += kr[j] * v;
            }
        });
        return means;
    }

private:
    PressureData apply_kernel(const std::vector<double>& means, int nr, const std::vector<double>& kernel,
                              const std::vector<int>& extent) const
    {
        const int M = geometry_.detectors();
        const int nt = geometry_.time_samples();
        PressureData p(geometry_);
        parallel_for(M, [&](std::int64_t m) {
            const double* row = means.data() + m * nr;
            auto out = p.row(static_cast<int>(m));
            for (int k = 0; k < nt; ++k) {
                const double* kr = kernel.data() + static_cast<std::size_t>(k) * nr;
                double s = 0.0;
                for (int j = 0; j < extent[k]; ++j) s += kr[j] * row[j];
                out[k] = s;
            }
        });
        return p;
    }

    /// Visits the bilinear stencil of every angular sample on circle (z_m, r_j).
    template <class Fn>
    void for_each_circle_sample(int m, int j, Fn&& fn) const
    {
        const int d = grid_.size();
        const double inv_dx = 1.0 / grid_.spacing();
        const double r = radius_at(j);
        const Point2 z = detectors_[m];
        const int nphi = config_.angular_samples;
        for (int l = 0; l < nphi; ++l) {
            const double fx = (z.x + r * cos_[l] + 1.0) * inv_dx - 0.5;
            const double fy = (z.y + r * sin_[l] + 1.0) * inv_dx - 0.5;
            if (fx <= -1.0 || fy <= -1.0 || fx >= d || fy >= d) continue;
            const int ix = static_cast<int>(std::floor(fx));
            const int iy = static_cast<int>(std::floor(fy));
            const double tx = fx - ix;
            const double ty = fy - iy;
            const bool x0 = ix >= 0, x1 = ix + 1 < d, y0 = iy >= 0, y1 = iy + 1 < d;
            const std::size_t base = static_cast<std::size_t>(iy) * d + ix;
            if (y0 && x0) fn(base, (1.0 - tx) * (1.0 - ty));
            if (y0 && x1) fn(base + 1, tx * (1.0 - ty));
            if (y1 && x0) fn(base + d, (1.0 - tx) * ty);
            if (y1 && x1) fn(base + d + 1, tx * ty);
        }
    }

    void build_radial_kernel(int nr, std::vector<double>& kernel, std::vector<int>& extent) const
    {
        const int nt = geometry_.time_samples();
        const int nu = nr;
        const double dr = geometry_.final_time() / (nr - 1);
        const double du = 0.5 * std::numbers::pi / nu;

        // abel[k][j]: weight of m(r_j) in W(t_k) = ∫₀^{π/2} t sin(u) m(t sin u) du
        std::vector<double> abel(static_cast<std::size_t>(nt) * nr, 0.0);
        for (int k = 0; k < nt; ++k) {
            const double t = geometry_.time(k);
            double* row = abel.data() + static_cast<std::size_t>(k) * nr;
            for (int i = 0; i < nu; ++i) {
                const double su = std::sin((i + 0.5) * du);
                const double r = t * su;
                const double w = du * t * su;
                const double f = r / dr;
                int j0 = static_cast<int>(std::floor(f));
                if (j0 >= nr - 1) {
                    row[nr - 1] += w;
                    continue;
                }
                const double frac = f - j0;
                row[j0] += w * (1.0 - frac);
                row[j0 + 1] += w * frac;
            }
        }

        kernel.assign(static_cast<std::size_t>(nt) * nr, 0.0);
        std::vector<double> col(nt), dcol(nt);
        for (int j = 0; j < nr; ++j) {
            for (int k = 0; k < nt; ++k) col[k] = abel[static_cast<std::size_t>(k) * nr + j];
            time_derivative(col, dcol, geometry_.time_step());
            for (int k = 0; k < nt; ++k) kernel[static_cast<std::size_t>(k) * nr + j] = dcol[k];
        }
        extent.assign(nt, 0);
        for (int k = 0; k < nt; ++k) {
            const double* kr = kernel.data() + static_cast<std::size_t>(k) * nr;
            int e = nr;
            while (e > 0 && kr[e - 1] == 0.0) --e;
            extent[k] = e;
        }
    }

    void warn_if_outside(const Image& image) const
    {
        const int d = grid_.size();
        const double R = geometry_.radius();
        for (int iy = 0; iy < d; ++iy)
            for (int ix = 0; ix < d; ++ix)
                if (image.at(iy, ix) != 0.0 && std::hypot(grid_.center(ix), grid_.center(iy)) >= R) {
                    std::clog << "warning: source support extends beyond the detection circle\n";
                    return;
                }
    }

    Grid grid_;
    Geometry geometry_;
    ForwardConfig config_;
    std::vector<Point2> detectors_;
    std::vector<double> cos_, sin_;
    std::vector<double> kernel_;
    std::vector<int> kernel_extent_;
    std::vector<double> fine_kernel_;  // analytic_radial_samples() columns
    std::vector<int> fine_extent_;
};

/// Adds i.i.d. N(0, σ²) noise with σ = level · max|p|. Zero data is returned unchanged.
inline PressureData add_noise(const PressureData& data, double level, std::uint64_t seed)
{
    require(std::isfinite(level) && level >= 0.0, "add_noise: level must be nonnegative");
    double peak = 0.0;
    for (double v : data.values()) peak = std::max(peak, std::abs(v));
    PressureData out = data;
    if (level == 0.0 || peak == 0.0) return out;
    const double sigma = level * peak;
    CounterRng rng(seed);
    for (auto& v : out.values()) v += sigma * rng.normal();
    return out;
}

}  // namespace patrec
