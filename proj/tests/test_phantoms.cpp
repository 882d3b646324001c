#include <algorithm>
#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "patrec/phantoms.hpp"
#include "patrec/rng.hpp"

using namespace patrec;

TEST(EllipsePhantom, DrawsStayInRanges)
{
    const EllipseClassSpec spec;
    for (std::uint64_t seed = 0; seed < 2000; ++seed) {
        const auto ph = sample_ellipse_phantom(spec, seed);
        ASSERT_GE(ph.ellipses.size(), 1u);
        ASSERT_LE(ph.ellipses.size(), 5u);
        for (const auto& e : ph.ellipses) {
            EXPECT_GT(e.center.x, -0.5);
            EXPECT_LT(e.center.x, 0.5);
            EXPECT_GT(e.center.y, -0.5);
            EXPECT_LT(e.center.y, 0.5);
            EXPECT_GE(e.a, 0.1);
            EXPECT_LT(e.a, 0.2);
            EXPECT_GE(e.b, 0.1);
            EXPECT_LT(e.b, 0.2);
            EXPECT_EQ(e.angle, 0.0);
            EXPECT_EQ(e.intensity, 1.0);
        }
    }
}

TEST(EllipsePhantom, SameSeedSamePhantom)
{
    EXPECT_EQ(sample_ellipse_phantom({}, 77), sample_ellipse_phantom({}, 77));
    EXPECT_NE(sample_ellipse_phantom({}, 77), sample_ellipse_phantom({}, 78));
}

TEST(EllipsePhantom, CountIsUniformChiSquare)
{
    int counts[5] = {};
    const int n = 10000;
    for (int s = 0; s < n; ++s) ++counts[sample_ellipse_phantom({}, derive_seed(2024, s)).ellipses.size() - 1];
    double chi2 = 0.0;
    for (int c : counts) chi2 += (c - n / 5.0) * (c - n / 5.0) / (n / 5.0);
    EXPECT_LT(chi2, 13.2767);  // χ²(4) upper 1% point
}

TEST(EllipsePhantom, SupportInsideSquare)
{
    Grid g(64);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto img = rasterize(sample_ellipse_phantom({}, seed), g);
        for (int iy = 0; iy < 64; ++iy)
            for (int ix = 0; ix < 64; ++ix)
                if (img.at(iy, ix) != 0.0) {
                    // the pixel cell must intersect [-0.7, 0.7]²
                    EXPECT_LT(std::abs(g.center(ix)) - g.spacing() / 2, 0.7);
                    EXPECT_LT(std::abs(g.center(iy)) - g.spacing() / 2, 0.7);
                }
    }
}

TEST(SheppLogan, EveryEllipseInsideUnitDisc)
{
    for (std::uint64_t seed = 0; seed < 500; ++seed) {
        const auto ph = sample_shepplogan_phantom(seed);
        ASSERT_EQ(ph.ellipses.size(), 10u);
        for (const auto& e : ph.ellipses) EXPECT_LE(norm(e.center) + std::max(e.a, e.b), 1.0);
    }
}

TEST(SheppLogan, SameSeedSamePhantom)
{
    EXPECT_EQ(sample_shepplogan_phantom(5), sample_shepplogan_phantom(5));
    EXPECT_NE(sample_shepplogan_phantom(5), sample_shepplogan_phantom(6));
}

TEST(SheppLogan, StructureAndParameterRanges)
{
    const SheppLoganSpec spec;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const auto ph = sample_shepplogan_phantom(seed);
        const auto& outer = ph.ellipses[0];
        EXPECT_EQ(outer.intensity, 1.0);
        EXPECT_GE(outer.a, 0.6);
        EXPECT_LT(outer.a, 0.8);
        EXPECT_GE(outer.b, 0.7);
        EXPECT_LT(outer.b, 0.9);
        EXPECT_LT(std::abs(outer.center.x), 0.05);
        EXPECT_LT(std::abs(outer.center.y), 0.05);
        const double inscribed = std::min(outer.a, outer.b);
        for (std::size_t k = 1; k < ph.ellipses.size(); ++k) {
            const auto& e = ph.ellipses[k];
            EXPECT_LE(norm(e.center - outer.center), inscribed + 1e-12);
            EXPECT_GE(e.a, spec.interior_axis[0]);
            EXPECT_LT(e.a, spec.interior_axis[1]);
            EXPECT_GE(e.angle, 0.0);
            EXPECT_LT(e.angle, std::numbers::pi);
            EXPECT_GT(e.intensity, -0.8);
            EXPECT_LT(e.intensity, 0.8);
        }
    }
}

TEST(SheppLogan, PixelRangeWithinEnumeratedExtremes)
{
    // extremes reachable by the generator: outer intensity plus all interior
    // intensities at their bounds
    const SheppLoganSpec spec;
    const double lo = std::min(0.0, spec.interior_count * spec.interior_intensity[0]);
    const double hi = spec.outer_intensity + spec.interior_count * spec.interior_intensity[1];
    Grid g(64);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto img = rasterize(sample_shepplogan_phantom(seed), g);
        for (double v : img.values()) {
            EXPECT_GE(v, lo);
            EXPECT_LE(v, hi);
        }
    }
}

TEST(SheppLogan, ContainmentFailureIsReported)
{
    SheppLoganSpec spec;
    spec.interior_axis = {0.95, 0.99};  // never fits
    spec.max_retries = 5;
    EXPECT_THROW(sample_shepplogan_phantom(1, spec), NumericalError);
}

TEST(Rasterize, EmptyPhantomIsZero)
{
    const auto img = rasterize(Phantom{}, Grid(16));
    for (double v : img.values()) EXPECT_EQ(v, 0.0);
}

TEST(Rasterize, DiscAreaMatchesAnalytic)
{
    Phantom ph;
    ph.ellipses.push_back({{0.0, 0.0}, 0.5, 0.5, 0.0, 1.0});
    const Grid g(128);
    const double dx2 = g.spacing() * g.spacing();
    double s4 = 0.0, s8 = 0.0;
    const auto r4 = rasterize(ph, g), r8 = rasterize(ph, g, 8);
    for (double v : r4.values()) s4 += v;
    for (double v : r8.values()) s8 += v;
    EXPECT_NEAR(s4 * dx2, std::numbers::pi / 4, 0.01 * std::numbers::pi / 4);
    EXPECT_NEAR(s8 * dx2, std::numbers::pi / 4, 0.01 * std::numbers::pi / 4);
    EXPECT_NEAR(s4 * dx2, s8 * dx2, 1e-3);
}

TEST(Rasterize, OverlapSumsIndicators)
{
    Phantom ph;
    ph.ellipses.push_back({{-0.1, 0.0}, 0.3, 0.2, 0.0, 1.0});
    ph.ellipses.push_back({{0.1, 0.0}, 0.3, 0.2, 0.0, 1.0});
    const Grid g(32);
    const auto img = rasterize(ph, g);
    // pixel at the origin lies deep inside both ellipses
    EXPECT_DOUBLE_EQ(img.at(16, 16), 2.0);
    EXPECT_DOUBLE_EQ(img.at(15, 15), 2.0);
}

TEST(Rasterize, LinearInIntensities)
{
    auto ph = sample_shepplogan_phantom(3);
    const Grid g(32);
    auto scaled = ph;
    for (auto& e : scaled.ellipses) e.intensity *= 2.5;
    const auto a = rasterize(ph, g), b = rasterize(scaled, g);
    for (std::size_t i = 0; i < a.raw().size(); ++i) EXPECT_NEAR(b.raw()[i], 2.5 * a.raw()[i], 1e-12);

    Phantom first{{ph.ellipses.begin(), ph.ellipses.begin() + 4}};
    Phantom rest{{ph.ellipses.begin() + 4, ph.ellipses.end()}};
    const auto f = rasterize(first, g), r = rasterize(rest, g);
    for (std::size_t i = 0; i < a.raw().size(); ++i) EXPECT_NEAR(a.raw()[i], f.raw()[i] + r.raw()[i], 1e-12);
}

TEST(Phantom, CenterValueIsSumOfCoveringIntensities)
{
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto ph = sample_shepplogan_phantom(seed);
        for (const auto& e : ph.ellipses) {
            double expect = 0.0;
            for (const auto& f : ph.ellipses)
                if (f.level(e.center) <= 1.0) expect += f.intensity;
            EXPECT_DOUBLE_EQ(ph.value(e.center), expect);
        }
    }
}

TEST(CircleFraction, DiscClosedForm)
{
    // circle of radius r at distance D from the center of a disc of radius a
    const Ellipse disc{{0.2, -0.1}, 0.3, 0.3, 0.0, 1.0};
    for (double D : {0.0, 0.1, 0.23, 0.5}) {
        for (double r : {0.05, 0.17, 0.35, 0.6, 0.9}) {
            const Point2 z{disc.center.x + D, disc.center.y};
            double expect;
            if (r + D <= disc.a)
                expect = 1.0;
            else if (D == 0.0 || r >= D + disc.a || D >= r + disc.a)
                expect = 0.0;
            else
                expect = std::acos(std::clamp((r * r + D * D - disc.a * disc.a) / (2 * r * D), -1.0, 1.0)) /
                         std::numbers::pi;
            EXPECT_NEAR(circle_fraction_inside(disc, z, r, 64), expect, 1e-12) << "D=" << D << " r=" << r;
        }
    }
}

TEST(CircleFraction, TangentCirclesAreNearlyEmptyOrFull)
{
    // at tangency the crossing angle is only determined to about √ε
    const Ellipse disc{{0.0, 0.0}, 0.3, 0.3, 0.0, 1.0};
    EXPECT_NEAR(circle_fraction_inside(disc, {0.1, 0.0}, 0.2, 64), 1.0, 1e-7);
    EXPECT_NEAR(circle_fraction_inside(disc, {0.5, 0.0}, 0.2, 64), 0.0, 1e-7);
    EXPECT_NEAR(circle_fraction_inside(disc, {0.1, 0.0}, 0.4, 64), 0.0, 1e-7);
}

TEST(CircleFraction, MatchesDenseSamplingForRotatedEllipses)
{
    CounterRng rng(17);
    for (int trial = 0; trial < 200; ++trial) {
        const Ellipse e{{rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3)},
                        rng.uniform(0.02, 0.4),
                        rng.uniform(0.02, 0.4),
                        rng.uniform(0.0, std::numbers::pi),
                        1.0};
        const Point2 z{rng.uniform(-1, 1), rng.uniform(-1, 1)};
        const double r = rng.uniform(0.0, 1.5);
        const int n = 200000;
        int inside = 0;
        for (int k = 0; k < n; ++k) {
            const double phi = 2 * std::numbers::pi * (k + 0.5) / n;
            inside += e.contains({z.x + r * std::cos(phi), z.y + r * std::sin(phi)}) ? 1 : 0;
        }
        EXPECT_NEAR(circle_fraction_inside(e, z, r, 64), static_cast<double>(inside) / n, 2e-4);
    }
}

TEST(CircleFraction, CatchesShallowCrossingsBetweenLatticePoints)
{
    // thin ellipse centered halfway between the angles 0 and pi/4 of an
    // 8-point lattice, so no lattice sample lands inside it
    const double mid = std::numbers::pi / 8;
    const Ellipse e{{0.9 * std::cos(mid), 0.9 * std::sin(mid)}, 0.01, 0.2, mid, 1.0};
    const Point2 z{0.0, 0.0};
    const double r = 0.905;
    for (int k = 0; k < 8; ++k) {
        const double phi = k * std::numbers::pi / 4;
        ASSERT_FALSE(e.contains({r * std::cos(phi), r * std::sin(phi)}));
    }
    const double coarse = circle_fraction_inside(e, z, r, 8);
    const double fine = circle_fraction_inside(e, z, r, 4096);
    EXPECT_GT(fine, 0.0);
    EXPECT_NEAR(coarse, fine, 1e-12);
}

TEST(PhantomJson, RoundTrip)
{
    const auto ph = sample_shepplogan_phantom(12);
    const nlohmann::json j = ph;
    EXPECT_EQ(j.get<Phantom>(), ph);
    EXPECT_EQ(j.size(), ph.ellipses.size());
    EXPECT_TRUE(j[0].contains("center"));
}
