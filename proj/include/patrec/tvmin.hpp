#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "patrec/core.hpp"
#include "patrec/fbp.hpp"
#include "patrec/forward.hpp"

namespace patrec {

struct TvConfig {
    double lambda = 0.002;
    int outer_iterations = 20;
    int inner_iterations = 20;
    double epsilon = 1e-4;
    bool fbp_init = false;

    void validate() const
    {
        require(std::isfinite(lambda) && lambda >= 0.0, "TvConfig: lambda must be nonnegative");
        require(epsilon > 0.0, "TvConfig: epsilon must be positive");
        require(outer_iterations >= 1 && inner_iterations >= 1, "TvConfig: iteration counts must be positive");
    }
};

struct TvDiagnostics {
    std::vector<double> objective;                  // initial value, then one per outer iteration
    std::vector<std::vector<double>> cg_residuals;  // per outer iteration, ‖b − Ax‖ after each CG step
    bool breakdown = false;
    int breakdown_outer = -1;

    nlohmann::json to_json() const
    {
        return {{"objective", objective},
                {"cg_residuals", cg_residuals},
                {"breakdown", breakdown},
                {"breakdown_outer", breakdown_outer}};
    }
};

namespace tv_detail {

/// Forward differences; the last difference along each axis is zero.
inline void gradient(const Image& y, std::vector<double>& gx, std::vector<double>& gy)
{
    const int d = y.size();
    gx.assign(y.grid().pixel_count(), 0.0);
    gy.assign(y.grid().pixel_count(), 0.0);
    for (int iy = 0; iy < d; ++iy)
        for (int ix = 0; ix < d; ++ix) {
            const std::size_t i = static_cast<std::size_t>(iy) * d + ix;
            if (ix + 1 < d) gx[i] = y.at(iy, ix + 1) - y.at(iy, ix);
            if (iy + 1 < d) gy[i] = y.at(iy + 1, ix) - y.at(iy, ix);
        }
}

/// Transpose of gradient().
inline void gradient_adjoint(const std::vector<double>& gx, const std::vector<double>& gy, Image& out)
{
    const int d = out.size();
    for (int iy = 0; iy < d; ++iy)
        for (int ix = 0; ix < d; ++ix) {
            const std::size_t i = static_cast<std::size_t>(iy) * d + ix;
            if (ix + 1 < d) {
                out.at(iy, ix + 1) += gx[i];
                out.at(iy, ix) -= gx[i];
            }
            if (iy + 1 < d) {
                out.at(iy + 1, ix) += gy[i];
                out.at(iy, ix) -= gy[i];
            }
        }
}

inline void axpy(double a, std::span<const double> x, std::span<double> y)
{
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

}  // namespace tv_detail

/// Smoothed isotropic total variation Σ √(|∇Y|² + ε²).
inline double tv_seminorm(const Image& y, double epsilon)
{
    std::vector<double> gx, gy;
    tv_detail::gradient(y, gx, gy);
    double s = 0.0;
    for (std::size_t i = 0; i < gx.size(); ++i) s += std::sqrt(gx[i] * gx[i] + gy[i] * gy[i] + epsilon * epsilon);
    return s;
}

/// ½‖p − 𝒫Y‖² + λ TV_ε(Y).
inline double tv_objective(const Image& y, const PressureData& data, const WaveOperator& op, const TvConfig& config)
{
    require(y.grid() == op.grid(), "tv_objective: image grid does not match operator");
    require(data.geometry() == op.geometry(), "tv_objective: data geometry does not match operator");
    const auto py = op.apply_forward(y);
    double r2 = 0.0;
    for (std::size_t i = 0; i < py.raw().size(); ++i) {
        const double e = data.raw()[i] - py.raw()[i];
        r2 += e * e;
    }
    const double tv = config.lambda == 0.0 ? 0.0 : config.lambda * tv_seminorm(y, config.epsilon);
    return 0.5 * r2 + tv;
}

/// Lagged diffusivity: each outer step freezes w = 1/√(|∇Y_k|² + ε²) and runs
/// a fixed number of conjugate-gradient steps on
///     (𝒫*𝒫 + λ ∇ᵀ diag(w) ∇) Y = 𝒫* p
/// warm-started at Y_k. The frozen system is the normal equation of a
/// quadratic majorizer of the objective, so the objective cannot increase
/// while CG keeps decreasing that quadratic.
inline Image tv_reconstruct(const PressureData& data, const WaveOperator& op, const TvConfig& config,
                            TvDiagnostics* diagnostics = nullptr)
{
    config.validate();
    require(data.geometry() == op.geometry(), "tv_reconstruct: data geometry does not match operator");
    const Grid grid = op.grid();
    const std::size_t n = grid.pixel_count();

    Image y = config.fbp_init ? FbpOperator(grid, op.geometry()).reconstruct(data) : Image(grid);
    const Image rhs = op.apply_adjoint(data);

    TvDiagnostics diag;
    diag.objective.push_back(tv_objective(y, data, op, config));

    std::vector<double> w(n), gx, gy;
    auto apply_system = [&](const Image& x) {
        Image out = op.apply_adjoint(op.apply_forward(x));
        if (config.lambda > 0.0) {
            tv_detail::gradient(x, gx, gy);
            for (std::size_t i = 0; i < n; ++i) {
                gx[i] *= config.lambda * w[i];
                gy[i] *= config.lambda * w[i];
            }
            tv_detail::gradient_adjoint(gx, gy, out);
        }
        return out;
    };

    for (int outer = 0; outer < config.outer_iterations; ++outer) {
        tv_detail::gradient(y, gx, gy);
        const double eps2 = config.epsilon * config.epsilon;
        for (std::size_t i = 0; i < n; ++i) w[i] = 1.0 / std::sqrt(gx[i] * gx[i] + gy[i] * gy[i] + eps2);

        Image r = rhs;
        {
            const Image ay = apply_system(y);
            tv_detail::axpy(-1.0, ay.values(), r.values());
        }
        Image p = r;
        double rr = dot(r.values(), r.values());
        std::vector<double> residuals;
        for (int inner = 0; inner < config.inner_iterations && rr > 0.0; ++inner) {
            const Image ap = apply_system(p);
            const double curvature = dot(p.values(), ap.values());
            if (!(curvature > 0.0) || !std::isfinite(curvature)) {
                diag.breakdown = true;
                if (diag.breakdown_outer < 0) diag.breakdown_outer = outer;
                break;
            }
            const double alpha = rr / curvature;
            tv_detail::axpy(alpha, p.values(), y.values());
            tv_detail::axpy(-alpha, ap.values(), r.values());
            const double rr_next = dot(r.values(), r.values());
            residuals.push_back(std::sqrt(rr_next));
            const double beta = rr_next / rr;
            rr = rr_next;
            auto pv = p.values();
            const auto rv = r.values();
            for (std::size_t i = 0; i < n; ++i) pv[i] = rv[i] + beta * pv[i];
        }
        diag.cg_residuals.push_back(std::move(residuals));
        diag.objective.push_back(tv_objective(y, data, op, config));
    }
    if (!y.all_finite()) throw NumericalError("tv_reconstruct: iterate became non-finite");
    if (diagnostics) *diagnostics = std::move(diag);
    return y;
}

}  // namespace patrec
