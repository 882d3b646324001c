#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "patrec/forward.hpp"
#include "patrec/phantoms.hpp"
#include "patrec/rng.hpp"

using namespace patrec;

namespace {

Image random_image(const Grid& g, std::uint64_t seed)
{
    CounterRng rng(seed);
    Image img(g);
    for (auto& v : img.values()) v = rng.normal();
    return img;
}

PressureData random_pressure(const Geometry& geo, std::uint64_t seed)
{
    CounterRng rng(seed);
    PressureData p(geo);
    for (auto& v : p.values()) v = rng.normal();
    return p;
}

double max_abs(std::span<const double> v)
{
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

Phantom centered_disc(double a)
{
    Phantom ph;
    ph.ellipses.push_back({{0.0, 0.0}, a, a, 0.0, 1.0});
    return ph;
}

}  // namespace

TEST(WaveOperator, ConfigValidation)
{
    const Geometry geo(1.0, 16, 2.0, 100);
    EXPECT_THROW(WaveOperator(Grid(16), geo, {32, 200}), ValidationError);
    EXPECT_THROW(WaveOperator(Grid(16), geo, {64, 99}), ValidationError);
    EXPECT_NO_THROW(WaveOperator(Grid(16), geo, {64, 100}));
}

TEST(WaveOperator, KernelReproducesConstantMeans)
{
    // circular means m ≡ 1 give W(t) = t, so every pressure sample is 1
    const Geometry geo(1.0, 8, 2.0, 120);
    const WaveOperator op(Grid(16), geo, {64, 240});
    const auto& k = op.radial_kernel();
    for (int t = 0; t < geo.time_samples(); ++t) {
        double s = 0.0;
        for (int j = 0; j < op.radial_samples(); ++j) s += k[static_cast<std::size_t>(t) * op.radial_samples() + j];
        EXPECT_NEAR(s, 1.0, 1e-4) << "k=" << t;
    }
}

TEST(WaveOperator, ZeroInZeroOut)
{
    const WaveOperator op(Grid(32), Geometry(1.0, 12, 2.0, 80), {64, 160});
    const auto p = op.apply_forward(Image(Grid(32)));
    const auto q = op.simulate(Phantom{});
    const auto y = op.apply_adjoint(PressureData(op.geometry()));
    for (double v : p.values()) EXPECT_EQ(v, 0.0);
    for (double v : q.values()) EXPECT_EQ(v, 0.0);
    for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(WaveOperator, Linear)
{
    const Grid g(32);
    const WaveOperator op(g, Geometry(1.0, 12, 2.0, 80), {64, 160});
    const auto x = random_image(g, 1), y = random_image(g, 2);
    Image comb(g);
    for (std::size_t i = 0; i < comb.raw().size(); ++i) comb.raw()[i] = 2.0 * x.raw()[i] - 0.5 * y.raw()[i];
    const auto px = op.apply_forward(x), py = op.apply_forward(y), pc = op.apply_forward(comb);
    const double scale = max_abs(pc.values());
    for (std::size_t i = 0; i < pc.raw().size(); ++i)
        EXPECT_NEAR(pc.raw()[i], 2.0 * px.raw()[i] - 0.5 * py.raw()[i], 1e-12 * scale);
}

TEST(WaveOperator, AdjointDotProduct)
{
    const Grid g(64);
    const WaveOperator op(g, Geometry(1.0, 30, 2.0, 150));
    double worst = 0.0;
    for (int pair = 0; pair < 20; ++pair) {
        const auto x = random_image(g, derive_seed(5, pair));
        const auto p = random_pressure(op.geometry(), derive_seed(6, pair));
        const double lhs = dot(op.apply_forward(x).values(), p.values());
        const double rhs = dot(x.values(), op.apply_adjoint(p).values());
        worst = std::max(worst, std::abs(lhs - rhs) / std::max(std::abs(lhs), std::abs(rhs)));
    }
    EXPECT_LT(worst, 1e-10);
}

TEST(WaveOperator, NoSignalBeforeFirstArrival)
{
    // a centered disc of radius a is first reached by circles of radius R - a
    const int d = 128;
    const Grid g(d);
    const Geometry geo(1.0, 30, 2.0, 300);
    const WaveOperator op(g, geo);
    const double a = 0.3;
    const double first = geo.radius() - a - 2.0 * g.spacing();
    const auto analytic = op.simulate(centered_disc(a));
    const auto pixel = op.simulate(rasterize(centered_disc(a), g));
    int checked = 0;
    for (int m = 0; m < geo.detectors(); ++m)
        for (int k = 0; k < geo.time_samples() && geo.time(k) < first; ++k) {
            EXPECT_EQ(analytic.row(m)[k], 0.0);
            EXPECT_EQ(pixel.row(m)[k], 0.0);
            ++checked;
        }
    EXPECT_GT(checked, 0);
    EXPECT_GT(max_abs(analytic.values()), 0.1);
}

TEST(WaveOperator, CenteredDiscGivesIdenticalRows)
{
    const Geometry geo(1.0, 16, 2.0, 100);
    const WaveOperator op(Grid(32), geo, {64, 200});
    const auto p = op.simulate(centered_disc(0.4));
    for (int m = 1; m < geo.detectors(); ++m)
        for (int k = 0; k < geo.time_samples(); ++k) EXPECT_NEAR(p.row(m)[k], p.row(0)[k], 1e-12);
}

TEST(WaveOperator, NormalOperatorQuarterTurnSymmetry)
{
    // detector set, angular lattice and pixel grid are all invariant under a
    // quarter turn, so PᵀP maps a centered source to a symmetric image
    const int d = 32;
    const Grid g(d);
    const WaveOperator op(g, Geometry(1.0, 32, 2.0, 100), {512, 200});
    Image src(g);
    src.at(d / 2 - 1, d / 2 - 1) = src.at(d / 2 - 1, d / 2) = src.at(d / 2, d / 2 - 1) = src.at(d / 2, d / 2) = 1.0;
    const auto img = op.apply_adjoint(op.apply_forward(src));
    const double scale = max_abs(img.values());
    ASSERT_GT(scale, 0.0);
    for (int iy = 0; iy < d; ++iy)
        for (int ix = 0; ix < d; ++ix) EXPECT_NEAR(img.at(ix, d - 1 - iy), img.at(iy, ix), 1e-10 * scale);
}

TEST(WaveOperator, RefinementConverges)
{
    const Geometry geo(1.0, 8, 2.0, 100);
    const Grid g(16);
    const auto ph = sample_ellipse_phantom({}, 9);
    auto sim = [&](int nphi, int nr) { return WaveOperator(g, geo, {nphi, nr}).simulate(ph); };
    const auto ref = sim(512, 3200);
    auto err = [&](const PressureData& p) {
        double e = 0.0;
        for (std::size_t i = 0; i < p.raw().size(); ++i) e = std::max(e, std::abs(p.raw()[i] - ref.raw()[i]));
        return e;
    };
    const double e1 = err(sim(64, 200));
    const double e2 = err(sim(128, 400));
    const double e3 = err(sim(256, 800));
    EXPECT_LT(e2, e1);
    EXPECT_LT(e3, e2);
}

TEST(WaveOperator, SimulateRejectsNonFinite)
{
    const WaveOperator op(Grid(16), Geometry(1.0, 8, 2.0, 50), {64, 100});
    Image img(Grid(16));
    img.at(3, 3) = std::nan("");
    EXPECT_THROW(op.simulate(img), ValidationError);
    Phantom ph = centered_disc(0.2);
    ph.ellipses[0].intensity = INFINITY;
    EXPECT_THROW(op.simulate(ph), ValidationError);
}

TEST(WaveOperator, GeometryMismatchRejected)
{
    const WaveOperator op(Grid(16), Geometry(1.0, 8, 2.0, 50), {64, 100});
    EXPECT_THROW(op.apply_forward(Image(Grid(32))), ValidationError);
    EXPECT_THROW(op.apply_adjoint(PressureData(Geometry(1.0, 9, 2.0, 50))), ValidationError);
}

TEST(AddNoise, LevelZeroIsIdentity)
{
    const auto p = random_pressure(Geometry(1.0, 8, 2.0, 50), 3);
    EXPECT_EQ(add_noise(p, 0.0, 11).raw(), p.raw());
}

TEST(AddNoise, ZeroDataUnchanged)
{
    const PressureData p(Geometry(1.0, 8, 2.0, 50));
    EXPECT_EQ(add_noise(p, 0.05, 11).raw(), p.raw());
}

TEST(AddNoise, NegativeLevelRejected)
{
    const PressureData p(Geometry(1.0, 8, 2.0, 50));
    EXPECT_THROW(add_noise(p, -0.1, 1), ValidationError);
}

TEST(AddNoise, DeterministicPerSeed)
{
    const auto p = random_pressure(Geometry(1.0, 8, 2.0, 50), 3);
    EXPECT_EQ(add_noise(p, 0.1, 11).raw(), add_noise(p, 0.1, 11).raw());
    EXPECT_NE(add_noise(p, 0.1, 11).raw(), add_noise(p, 0.1, 12).raw());
}

TEST(AddNoise, StandardDeviationScalesWithPeak)
{
    // 10⁶ samples with peak 10 at level 0.02: σ = 0.2
    const Geometry geo(1.0, 1000, 2.0, 1000);
    PressureData p(geo);
    p.raw()[0] = 10.0;
    const auto noisy = add_noise(p, 0.02, 99);
    double s = 0.0, s2 = 0.0;
    const auto n = static_cast<double>(p.raw().size() - 1);
    for (std::size_t i = 1; i < p.raw().size(); ++i) {
        s += noisy.raw()[i];
        s2 += noisy.raw()[i] * noisy.raw()[i];
    }
    const double mean = s / n;
    const double sd = std::sqrt(s2 / n - mean * mean);
    EXPECT_NEAR(sd, 0.2, 0.01 * 0.2);
    EXPECT_NEAR(mean, 0.0, 5.0 * 0.2 / std::sqrt(n));
}
