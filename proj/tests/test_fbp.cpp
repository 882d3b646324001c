#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "patrec/fbp.hpp"
#include "patrec/forward.hpp"
#include "patrec/phantoms.hpp"
#include "patrec/rng.hpp"

using namespace patrec;

namespace {

PressureData random_pressure(const Geometry& geo, std::uint64_t seed)
{
    CounterRng rng(seed);
    PressureData p(geo);
    for (auto& v : p.values()) v = rng.normal();
    return p;
}

}  // namespace

TEST(Fbp, AbelTableOfLinearSignal)
{
    // q(t) = t gives F(ρ) = √(4R² − ρ²)
    const Geometry geo(1.0, 8, 2.0, 300);
    const FbpOperator op(Grid(16), geo);
    std::vector<double> q(geo.time_samples());
    for (int k = 0; k < geo.time_samples(); ++k) q[k] = geo.time(k);
    const auto F = op.abel_table(q);
    ASSERT_EQ(F.size(), static_cast<std::size_t>(op.radial_samples()));
    for (int j = 1; j < op.radial_samples(); ++j) {
        const double rho = j * op.radial_step();
        EXPECT_NEAR(F[j], std::sqrt(std::max(0.0, 4.0 - rho * rho)), 1e-3) << "rho=" << rho;
    }
    EXPECT_NEAR(F[0], 2.0, 1e-3);
}

TEST(Fbp, ZeroDataGivesZero)
{
    const Geometry geo(1.0, 12, 2.0, 80);
    const FbpOperator op(Grid(16), geo);
    const auto table = op.filter(PressureData(geo));
    for (double v : table) EXPECT_EQ(v, 0.0);
    const auto rec = op.reconstruct(PressureData(geo));
    for (double v : rec.values()) EXPECT_EQ(v, 0.0);
}

TEST(Fbp, TableFiniteUpToTruncation)
{
    const Geometry geo(1.0, 12, 2.0, 80);
    const FbpOperator op(Grid(16), geo);
    const auto table = op.filter(random_pressure(geo, 4));
    for (double v : table) EXPECT_TRUE(std::isfinite(v));
    EXPECT_DOUBLE_EQ(op.truncation(), 2.0);
    EXPECT_EQ(op.radial_samples(), 160);
}

TEST(Fbp, Linear)
{
    const Geometry geo(1.0, 12, 2.0, 80);
    const Grid g(16);
    const FbpOperator op(g, geo);
    const auto a = random_pressure(geo, 1), b = random_pressure(geo, 2);
    PressureData c(geo);
    for (std::size_t i = 0; i < c.raw().size(); ++i) c.raw()[i] = 3.0 * a.raw()[i] + b.raw()[i];
    const auto ra = op.reconstruct(a), rb = op.reconstruct(b), rc = op.reconstruct(c);
    double scale = 0.0;
    for (double v : rc.values()) scale = std::max(scale, std::abs(v));
    for (std::size_t i = 0; i < rc.raw().size(); ++i)
        EXPECT_NEAR(rc.raw()[i], 3.0 * ra.raw()[i] + rb.raw()[i], 1e-12 * scale);
}

TEST(Fbp, RotatingDataRotatesReconstruction)
{
    const Geometry geo(1.0, 24, 2.0, 120);
    const FbpOperator op(Grid(16), geo);
    const auto table = op.filter(random_pressure(geo, 8));
    const int M = geo.detectors();
    const int n = op.radial_samples();
    const int s = 5;
    std::vector<double> shifted(table.size());
    for (int m = 0; m < M; ++m)
        std::copy_n(table.begin() + static_cast<std::size_t>((m + s) % M) * n, n,
                    shifted.begin() + static_cast<std::size_t>(m) * n);

    CounterRng rng(3);
    std::vector<Point2> pts, rotated;
    const double ang = 2.0 * std::numbers::pi * s / M;
    for (int i = 0; i < 50; ++i) {
        const Point2 p{rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9)};
        pts.push_back(p);
        rotated.push_back({std::cos(ang) * p.x - std::sin(ang) * p.y, std::sin(ang) * p.x + std::cos(ang) * p.y});
    }
    const auto lhs = op.backproject_at(shifted, pts);
    const auto rhs = op.backproject_at(table, rotated);
    for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_NEAR(lhs[i], rhs[i], 1e-9 * (1.0 + std::abs(rhs[i])));
}

TEST(Fbp, BackprojectMatchesPointEvaluation)
{
    const Geometry geo(1.0, 12, 2.0, 80);
    const Grid g(16);
    const FbpOperator op(g, geo);
    const auto table = op.filter(random_pressure(geo, 2));
    const auto img = op.backproject(table);
    std::vector<Point2> pts;
    for (int iy = 0; iy < 16; ++iy)
        for (int ix = 0; ix < 16; ++ix) pts.push_back({g.center(ix), g.center(iy)});
    const auto vals = op.backproject_at(table, pts);
    for (std::size_t i = 0; i < vals.size(); ++i) EXPECT_EQ(vals[i], img.raw()[i]);
}

TEST(Fbp, DenseDetectorsRecoverDisc)
{
    const Grid g(64);
    const Geometry geo(1.0, 256, 2.0, 300);
    Phantom ph;
    ph.ellipses.push_back({{0.1, -0.05}, 0.35, 0.35, 0.0, 1.0});
    const auto data = WaveOperator(g, geo).simulate(ph);
    const auto rec = FbpOperator(g, geo).reconstruct(data);
    EXPECT_LE(rel_l2_error(rec, rasterize(ph, g)), 0.2);
}

TEST(Fbp, ErrorDecreasesWithDetectorCount)
{
    const Grid g(32);
    auto mean_error = [&](int M) {
        const Geometry geo(1.0, M, 2.0, 150);
        const WaveOperator fwd(g, geo, {64, 300});
        const FbpOperator fbp(g, geo);
        double s = 0.0;
        for (int i = 0; i < 20; ++i) {
            const auto ph = sample_ellipse_phantom({}, derive_seed(77, i));
            s += rel_l2_error(fbp.reconstruct(fwd.simulate(ph)), rasterize(ph, g));
        }
        return s / 20;
    };
    const double e16 = mean_error(16), e64 = mean_error(64), e256 = mean_error(256);
    EXPECT_LT(e64, e16);
    EXPECT_LT(e256, e64);
}

TEST(Fbp, ConfigValidation)
{
    const Geometry geo(1.0, 12, 2.0, 80);
    FbpConfig c;
    c.truncation = 2.5;
    EXPECT_THROW(FbpOperator(Grid(16), geo, c), ValidationError);
    c = {};
    c.radial_samples = 40;
    EXPECT_THROW(FbpOperator(Grid(16), geo, c), ValidationError);
    const FbpOperator op(Grid(16), geo);
    EXPECT_THROW(op.backproject(std::vector<double>(7)), ValidationError);
    EXPECT_THROW(op.reconstruct(PressureData(Geometry(1.0, 13, 2.0, 80))), ValidationError);
}
