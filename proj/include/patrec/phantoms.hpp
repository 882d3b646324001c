#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include <nlohmann/json.hpp>

#include "patrec/core.hpp"
#include "patrec/rng.hpp"

namespace patrec {

struct Ellipse {
    Point2 center;
    double a = 0.1;          // semi-axis along the rotated x direction
    double b = 0.1;          // semi-axis along the rotated y direction
    double angle = 0.0;      // rotation in radians
    double intensity = 1.0;

    /// Quadratic form of the point in the ellipse frame; <= 1 on the closed ellipse.
    double level(Point2 p) const
    {
        const double c = std::cos(angle);
        const double s = std::sin(angle);
        const double dx = p.x - center.x;
        const double dy = p.y - center.y;
        const double u = (c * dx + s * dy) / a;
        const double v = (-s * dx + c * dy) / b;
        return u * u + v * v;
    }

    bool contains(Point2 p) const { return level(p) <= 1.0; }

    /// Radius of the smallest origin-centered disc known to contain the ellipse.
    double outer_radius() const { return norm(center) + std::max(a, b); }

    friend bool operator==(const Ellipse&, const Ellipse&) = default;
};

struct Phantom {
    std::vector<Ellipse> ellipses;

    double value(Point2 p) const
    {
        double v = 0.0;
        for (const auto& e : ellipses)
            if (e.contains(p)) v += e.intensity;
        return v;
    }

    double outer_radius() const
    {
        double r = 0.0;
        for (const auto& e : ellipses) r = std::max(r, e.outer_radius());
        return r;
    }

    friend bool operator==(const Phantom&, const Phantom&) = default;
};

/// Random axis-aligned unit-intensity ellipses. Defaults are the training class:
/// centers in (-0.5, 0.5)², semi-axes in (0.1, 0.2), 1 to 5 ellipses.
struct EllipseClassSpec {
    double center_lo = -0.5;
    double center_hi = 0.5;
    double axis_lo = 0.1;
    double axis_hi = 0.2;
    int count_lo = 1;
    int count_hi = 5;
    double angle = 0.0;
    double intensity = 1.0;

    void validate() const
    {
        require(center_lo < center_hi, "EllipseClassSpec: empty center range");
        require(0.0 < axis_lo && axis_lo < axis_hi, "EllipseClassSpec: invalid axis range");
        require(1 <= count_lo && count_lo <= count_hi, "EllipseClassSpec: empty count range");
    }
};

inline Phantom sample_ellipse_phantom(const EllipseClassSpec& spec, std::uint64_t seed)
{
    spec.validate();
    CounterRng rng(seed);
    const auto count = rng.uniform_int(spec.count_lo, spec.count_hi);
    Phantom ph;
    for (std::int64_t i = 0; i < count; ++i) {
        Ellipse e;
        e.center.x = rng.uniform(spec.center_lo, spec.center_hi);
        e.center.y = rng.uniform(spec.center_lo, spec.center_hi);
        e.a = rng.uniform(spec.axis_lo, spec.axis_hi);
        e.b = rng.uniform(spec.axis_lo, spec.axis_hi);
        e.angle = spec.angle;
        e.intensity = spec.intensity;
        ph.ellipses.push_back(e);
    }
    return ph;
}

/// Parameter ranges of the randomized Shepp-Logan type generator.
struct SheppLoganSpec {
    std::array<double, 2> outer_a{0.6, 0.8};
    std::array<double, 2> outer_b{0.7, 0.9};
    double outer_center = 0.05;  // each coordinate uniform in (-v, v)
    double outer_intensity = 1.0;
    int interior_count = 9;
    std::array<double, 2> interior_axis{0.05, 0.35};
    std::array<double, 2> interior_intensity{-0.8, 0.8};
    int max_retries = 1000;
};

/// One outer ellipse plus randomized interior ellipses, every support inside the unit disc.
inline Phantom sample_shepplogan_phantom(std::uint64_t seed, const SheppLoganSpec& spec = {})
{
    CounterRng rng(seed);
    Phantom ph;

    Ellipse outer;
    outer.center = {rng.uniform(-spec.outer_center, spec.outer_center),
                    rng.uniform(-spec.outer_center, spec.outer_center)};
    outer.a = rng.uniform(spec.outer_a[0], spec.outer_a[1]);
    outer.b = rng.uniform(spec.outer_b[0], spec.outer_b[1]);
    outer.intensity = spec.outer_intensity;
    require(outer.outer_radius() <= 1.0, "sample_shepplogan_phantom: outer ellipse ranges exceed the unit disc");
    ph.ellipses.push_back(outer);

    const double inscribed = std::min(outer.a, outer.b);
    for (int k = 0; k < spec.interior_count; ++k) {
        bool placed = false;
        for (int attempt = 0; attempt < spec.max_retries && !placed; ++attempt) {
            // uniform point in the inscribed disc
            const double rho = inscribed * std::sqrt(rng.uniform());
            const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
            Ellipse e;
            e.center = {outer.center.x + rho * std::cos(phi), outer.center.y + rho * std::sin(phi)};
            e.a = rng.uniform(spec.interior_axis[0], spec.interior_axis[1]);
            e.b = rng.uniform(spec.interior_axis[0], spec.interior_axis[1]);
            e.angle = rng.uniform(0.0, std::numbers::pi);
            e.intensity = rng.uniform(spec.interior_intensity[0], spec.interior_intensity[1]);
            if (e.outer_radius() <= 1.0) {
                ph.ellipses.push_back(e);
                placed = true;
            }
        }
        if (!placed) throw NumericalError("sample_shepplogan_phantom: containment retries exhausted");
    }
    return ph;
}

/// Pixel averages of the phantom over an S×S lattice of sub-samples per cell.
inline Image rasterize(const Phantom& phantom, const Grid& grid, int supersample = 4)
{
    require(supersample >= 1, "rasterize: supersample must be positive");
    Image img(grid);
    const int d = grid.size();
    const double dx = grid.spacing();
    const double sub = dx / supersample;
    const double weight = 1.0 / (supersample * supersample);

    auto to_index = [&](double x) { return static_cast<int>(std::floor((x + 1.0) / dx)); };

    for (const auto& e : phantom.ellipses) {
        const double reach = std::max(e.a, e.b);
        const int ix0 = std::max(0, to_index(e.center.x - reach));
        const int ix1 = std::min(d - 1, to_index(e.center.x + reach));
        const int iy0 = std::max(0, to_index(e.center.y - reach));
        const int iy1 = std::min(d - 1, to_index(e.center.y + reach));
        for (int iy = iy0; iy <= iy1; ++iy) {
            const double y0 = -1.0 + iy * dx;
            for (int ix = ix0; ix <= ix1; ++ix) {
                const double x0 = -1.0 + ix * dx;
                int hits = 0;
                for (int sy = 0; sy < supersample; ++sy)
                    for (int sx = 0; sx < supersample; ++sx)
                        hits += e.contains({x0 + (sx + 0.5) * sub, y0 + (sy + 0.5) * sub}) ? 1 : 0;
                if (hits) img.at(iy, ix) += e.intensity * (hits * weight);
            }
        }
    }
    return img;
}

/// Fraction of the circle |x - z| = r lying inside the ellipse.
///
/// The boundary crossings are the roots of a degree-2 trigonometric
/// polynomial in the circle angle. They are bracketed on an n_phi-point
/// angular lattice (including dips between lattice points, found by
/// golden-section search around sampled local extrema) and refined by
/// bisection, so the result is exact up to root tolerance.
inline double circle_fraction_inside(const Ellipse& e, Point2 z, double r, int n_phi)
{
    if (r <= 0.0) return e.contains(z) ? 1.0 : 0.0;

    const double c = std::cos(e.angle);
    const double s = std::sin(e.angle);
    const double dx = z.x - e.center.x;
    const double dy = z.y - e.center.y;
    const double w1 = c * dx + s * dy;
    const double w2 = -s * dx + c * dy;
    const double dist = std::hypot(w1, w2);
    const double big = std::max(e.a, e.b);
    const double small = std::min(e.a, e.b);
    if (dist - r > big || r - dist > big) return 0.0;
    if (r + dist < small) return 1.0;

    const double ia = 1.0 / e.a;
    const double ib = 1.0 / e.b;
    auto g = [&](double psi) {
        const double u = (w1 + r * std::cos(psi)) * ia;
        const double v = (w2 + r * std::sin(psi)) * ib;
        return u * u + v * v - 1.0;
    };

    constexpr double two_pi = 2.0 * std::numbers::pi;
    double step = two_pi / n_phi;

    // When z lies outside the bounding disc, only an arc facing the centre can
    // meet the ellipse; sample that arc (padded by two steps) at the same density.
    bool periodic = true;
    double base = 0.0;
    int n = n_phi;
    if (dist > big) {
        const double c_arg = (r * r + dist * dist - big * big) / (2.0 * r * dist);
        const double half = std::acos(std::clamp(c_arg, -1.0, 1.0)) + 2.0 * step;
        if (half < 0.5 * two_pi) {
            periodic = false;
            n = std::max(8, static_cast<int>(std::ceil(2.0 * half / step))) + 1;
            step = 2.0 * half / (n - 1);
            base = std::atan2(-w2, -w1) - half;
        }
    }

    thread_local std::vector<double> vals;
    vals.resize(n);
    for (int i = 0; i < n; ++i) vals[i] = g(base + i * step);

    auto bisect = [&](double lo, double hi, bool lo_inside) {
        for (int it = 0; it < 52; ++it) {
            const double mid = 0.5 * (lo + hi);
            if ((g(mid) < 0.0) == lo_inside)
                lo = mid;
            else
                hi = mid;
        }
        return 0.5 * (lo + hi);
    };
    // golden-section search for the extremum of sign*g on [lo, hi]
    auto extremum = [&](double lo, double hi, double sign) {
        constexpr double inv_phi = 0.6180339887498949;
        double x1 = hi - inv_phi * (hi - lo);
        double x2 = lo + inv_phi * (hi - lo);
        double f1 = sign * g(x1);
        double f2 = sign * g(x2);
        for (int it = 0; it < 60; ++it) {
            if (f1 < f2) {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - inv_phi * (hi - lo);
                f1 = sign * g(x1);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + inv_phi * (hi - lo);
                f2 = sign * g(x2);
            }
        }
        return 0.5 * (lo + hi);
    };

    thread_local std::vector<double> roots;
    roots.clear();
    const int last = periodic ? n : n - 1;
    for (int i = 0; i < last; ++i) {
        const int j = (i + 1) % n;
        const bool in_i = vals[i] < 0.0;
        const bool in_j = vals[j] < 0.0;
        const double lo = base + i * step;
        if (in_i != in_j) {
            roots.push_back(bisect(lo, lo + step, in_i));
            continue;
        }
        // sampled local extremum at i: the curve may cross zero twice between i-1 and i+1
        if (!periodic && i == 0) continue;
        const int h = (i + n - 1) % n;
        const bool in_h = vals[h] < 0.0;
        if (in_h != in_i) continue;
        const double sign = in_i ? -1.0 : 1.0;  // look for a min when outside, a max when inside
        if (sign * vals[i] < sign * vals[h] && sign * vals[i] <= sign * vals[j]) {
            const double a = base + (i - 1) * step;
            const double b = base + (i + 1) * step;
            const double m = extremum(a, b, sign);
            if ((g(m) < 0.0) != in_i) {
                roots.push_back(bisect(a, m, in_i));
                roots.push_back(bisect(m, b, !in_i));
            }
        }
    }

    if (roots.empty()) return vals[0] < 0.0 ? 1.0 : 0.0;
    if (periodic)
        for (auto& x : roots) x = std::fmod(x + two_pi, two_pi);
    std::sort(roots.begin(), roots.end());
    double inside = 0.0;
    for (std::size_t k = 0; k < roots.size(); ++k) {
        const double lo = roots[k];
        double hi;
        if (k + 1 < roots.size())
            hi = roots[k + 1];
        else if (periodic)
            hi = roots[0] + two_pi;
        else
            break;
        if (hi - lo <= 0.0) continue;
        if (g(0.5 * (lo + hi)) < 0.0) inside += hi - lo;
    }
    return inside / two_pi;
}

/// Mean of the phantom over the circle of radius r about z.
inline double circular_mean(const Phantom& phantom, Point2 z, double r, int n_phi)
{
    double m = 0.0;
    for (const auto& e : phantom.ellipses) {
        const double f = circle_fraction_inside(e, z, r, n_phi);
        if (f != 0.0) m += e.intensity * f;
    }
    return m;
}

inline void to_json(nlohmann::json& j, const Ellipse& e)
{
    j = nlohmann::json{{"center", {e.center.x, e.center.y}},
                       {"axes", {e.a, e.b}},
                       {"angle", e.angle},
                       {"intensity", e.intensity}};
}

inline void from_json(const nlohmann::json& j, Ellipse& e)
{
    e.center = {j.at("center").at(0).get<double>(), j.at("center").at(1).get<double>()};
    e.a = j.at("axes").at(0).get<double>();
    e.b = j.at("axes").at(1).get<double>();
    e.angle = j.value("angle", 0.0);
    e.intensity = j.value("intensity", 1.0);
    require(e.a > 0.0 && e.b > 0.0, "ellipse semi-axes must be positive");
}

inline void to_json(nlohmann::json& j, const Phantom& p) { j = p.ellipses; }
inline void from_json(const nlohmann::json& j, Phantom& p) { p.ellipses = j.get<std::vector<Ellipse>>(); }

}  // namespace patrec
