#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "patrec/core.hpp"
#include "patrec/forward.hpp"
#include "patrec/parallel.hpp"

namespace patrec {

struct FbpConfig {
    double truncation = 0.0;  // upper time limit; 0 selects 2R
    int radial_samples = 0;   // Nρ; 0 selects 2·Nt

    double resolved_truncation(const Geometry& g) const { return truncation > 0.0 ? truncation : 2.0 * g.radius(); }
    int resolved_radial_samples(const Geometry& g) const
    {
        return radial_samples > 0 ? radial_samples : 2 * g.time_samples();
    }

    void validate(const Geometry& g) const
    {
        require(resolved_truncation(g) <= g.final_time() * (1.0 + 1e-12), "FbpConfig: truncation exceeds T");
        require(resolved_radial_samples(g) >= g.time_samples(), "FbpConfig: radial_samples must be at least Nt");
    }
};

/// Filtered backprojection for the circular geometry, truncated at t = 2R.
///
///   q(z, t)  = ∂_t (t p(z, t))
///   F(z, ρ)  = ∫_ρ^{2R} q(z, t) / √(t² − ρ²) dt = ∫_0^{acosh(2R/ρ)} q(z, ρ cosh v) dv
///   h(r)     ≈ −(1/(πR)) · (2πR/M) Σ_m F(z_m, |r − z_m|)
///
/// F is tabulated per detector on a uniform ρ-grid over [0, 2R] and
/// interpolated linearly for each pixel.
class FbpOperator {
public:
    FbpOperator(Grid grid, Geometry geometry, FbpConfig config = {})
        : grid_(grid), geometry_(geometry), detectors_(detector_positions(geometry))
    {
        config.validate(geometry_);
        truncation_ = config.resolved_truncation(geometry_);
        nrho_ = config.resolved_radial_samples(geometry_);
        build_tables();
    }

    const Grid& grid() const { return grid_; }
    const Geometry& geometry() const { return geometry_; }
    int radial_samples() const { return nrho_; }
    double truncation() const { return truncation_; }
    double radial_step() const { return truncation_ / (nrho_ - 1); }

    /// Abel-type integral of one filtered signal q sampled on the time grid.
    std::vector<double> abel_table(std::span<const double> q) const
    {
        require(q.size() == static_cast<std::size_t>(geometry_.time_samples()), "abel_table: wrong signal length");
        return apply_rows(abel_, q);
    }

    /// M×Nρ table F[m, ρ_j] for the given data.
    std::vector<double> filter(const PressureData& data) const
    {
        require(data.geometry() == geometry_, "fbp: geometry does not match operator");
        const int M = geometry_.detectors();
        std::vector<double> table(static_cast<std::size_t>(M) * nrho_);
        parallel_for(M, [&](std::int64_t m) {
            const auto f = apply_rows(filter_, data.row(static_cast<int>(m)));
            std::copy(f.begin(), f.end(), table.begin() + m * nrho_);
        });
        return table;
    }

    Image reconstruct(const PressureData& data) const { return backproject(filter(data)); }

    Image backproject(const std::vector<double>& table) const
    {
        check_table(table);
        const int d = grid_.size();
        Image out(grid_);
        parallel_for(d, [&](std::int64_t iy) {
            const double y = grid_.center(static_cast<int>(iy));
            for (int ix = 0; ix < d; ++ix) out.at(static_cast<int>(iy), ix) = evaluate(table, {grid_.center(ix), y});
        });
        return out;
    }

    /// Backprojection at arbitrary points.
    std::vector<double> backproject_at(const std::vector<double>& table, std::span<const Point2> points) const
    {
        check_table(table);
        std::vector<double> out(points.size());
        parallel_for(static_cast<std::int64_t>(points.size()), [&](std::int64_t i) { out[i] = evaluate(table, points[i]); });
        return out;
    }

private:
    void check_table(const std::vector<double>& table) const
    {
        require(table.size() == static_cast<std::size_t>(geometry_.detectors()) * nrho_,
                "fbp: filtered table has the wrong size");
    }

    /// −(2/M) Σ_m F_m(|r − z_m|); points farther than the truncation contribute 0.
    double evaluate(const std::vector<double>& table, Point2 r) const
    {
        const int M = geometry_.detectors();
        const double inv_step = 1.0 / radial_step();
        double s = 0.0;
        for (int m = 0; m < M; ++m) {
            const double f = std::hypot(r.x - detectors_[m].x, r.y - detectors_[m].y) * inv_step;
            const int j = static_cast<int>(f);
            if (j >= nrho_ - 1) continue;
            const double w = f - j;
            const double* row = table.data() + static_cast<std::size_t>(m) * nrho_;
            s += (1.0 - w) * row[j] + w * row[j + 1];
        }
        return -2.0 / M * s;
    }

    std::vector<double> apply_rows(const std::vector<double>& mat, std::span<const double> v) const
    {
        const int nt = geometry_.time_samples();
        std::vector<double> out(nrho_, 0.0);
        for (int j = 0; j < nrho_; ++j) {
            const double* row = mat.data() + static_cast<std::size_t>(j) * nt;
            double s = 0.0;
            for (int k = 0; k < nt; ++k) s += row[k] * v[k];
            out[j] = s;
        }
        return out;
    }

    void build_tables()
    {
        const int nt = geometry_.time_samples();
        const double dt = geometry_.time_step();
        const double drho = radial_step();
        abel_.assign(static_cast<std::size_t>(nrho_) * nt, 0.0);

        for (int j = 0; j < nrho_ - 1; ++j) {
            // ρ = 0 is a removable point of the table; evaluate just beside it
            const double rho = j == 0 ? 0.25 * drho : j * drho;
            const double vmax = std::acosh(truncation_ / rho);
            // node spacing in t never exceeds half a time step
            const int nv = std::max(16, static_cast<int>(std::ceil(vmax * 2.0 * truncation_ / dt)));
            const double dv = vmax / nv;
            double* row = abel_.data() + static_cast<std::size_t>(j) * nt;
            for (int i = 0; i < nv; ++i) {
                const double t = rho * std::cosh((i + 0.5) * dv);
                const double f = t / dt;
                const int k = static_cast<int>(f);
                if (k >= nt - 1) {
                    row[nt - 1] += dv;
                    continue;
                }
                const double w = f - k;
                row[k] += dv * (1.0 - w);
                row[k + 1] += dv * w;
            }
        }

        // filter_ = abel_ · D · diag(t): fold the derivative stencil into each row
        filter_.assign(static_cast<std::size_t>(nrho_) * nt, 0.0);
        for (int j = 0; j < nrho_; ++j) {
            const double* a = abel_.data() + static_cast<std::size_t>(j) * nt;
            double* f = filter_.data() + static_cast<std::size_t>(j) * nt;
            f[0] += -a[0] / dt;
            f[1] += a[0] / dt;
            for (int k = 1; k + 1 < nt; ++k) {
                f[k + 1] += a[k] / (2.0 * dt);
                f[k - 1] -= a[k] / (2.0 * dt);
            }
            f[nt - 1] += a[nt - 1] / dt;
            f[nt - 2] -= a[nt - 1] / dt;
            for (int k = 0; k < nt; ++k) f[k] *= geometry_.time(k);
        }
    }

    Grid grid_;
    Geometry geometry_;
    std::vector<Point2> detectors_;
    double truncation_ = 2.0;
    int nrho_ = 0;
    std::vector<double> abel_;    // Nρ×Nt, q ↦ F
    std::vector<double> filter_;  // Nρ×Nt, p ↦ F
};

inline std::vector<double> fbp_filter(const PressureData& data, const FbpConfig& config = {})
{
    return FbpOperator(Grid(8), data.geometry(), config).filter(data);
}

inline Image fbp_reconstruct(const PressureData& data, const Grid& grid, const FbpConfig& config = {})
{
    return FbpOperator(grid, data.geometry(), config).reconstruct(data);
}

}  // namespace patrec
