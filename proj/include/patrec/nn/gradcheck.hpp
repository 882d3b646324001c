#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "patrec/nn/layers.hpp"
#include "patrec/rng.hpp"
#include "patrec/unet.hpp"

namespace patrec::nn {

/// Outcome of one finite-difference comparison.
struct GradCheckResult {
    std::string layer;
    std::string case_label;
    double deviation = 0.0;  // ‖analytic − numeric‖∞ / max(‖analytic‖∞, ‖numeric‖∞)
    double tolerance = 0.0;
    bool passed() const { return deviation <= tolerance; }
};

inline void to_json(nlohmann::json& j, const GradCheckResult& r)
{
    j = {{"layer", r.layer},
         {"case", r.case_label},
         {"deviation", r.deviation},
         {"tolerance", r.tolerance},
         {"passed", r.passed()}};
}

/// Central differences of loss() w.r.t. each entry of x, compared with `analytic`.
/// Returns the max-norm deviation relative to the larger of the two gradients.
inline double fd_deviation(std::vector<double>& x, const std::function<double()>& loss,
                           const std::vector<double>& analytic, double step = 1e-5)
{
    require(x.size() == analytic.size(), "fd_deviation: gradient size mismatch");
    double num_max = 0.0, ana_max = 0.0, diff_max = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + step;
        const double up = loss();
        x[i] = keep - step;
        const double down = loss();
        x[i] = keep;
        const double fd = (up - down) / (2.0 * step);
        num_max = std::max(num_max, std::abs(fd));
        ana_max = std::max(ana_max, std::abs(analytic[i]));
        diff_max = std::max(diff_max, std::abs(fd - analytic[i]));
    }
    // a gradient that vanishes identically is compared in absolute terms
    const double scale = std::max(num_max, ana_max);
    return scale > 1e-6 ? diff_max / scale : diff_max;
}

namespace gc_detail {

inline Tensor4<double> random_tensor(CounterRng& rng, int n, int c, int h, int w, double lo = -1.0, double hi = 1.0)
{
    Tensor4<double> t(n, c, h, w);
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

/// Values bounded away from zero: |v| ≥ margin.
inline Tensor4<double> random_signed_away(CounterRng& rng, int n, int c, int h, int w, double margin)
{
    Tensor4<double> t(n, c, h, w);
    for (auto& v : t.data) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(margin, 1.0);
    return t;
}

inline double inner(const Tensor4<double>& a, const Tensor4<double>& b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

inline std::string shape_label(const Tensor4<double>& t) { return shape_string(t); }

}  // namespace gc_detail

inline constexpr double kLinearTolerance = 1e-6;
inline constexpr double kNonlinearTolerance = 1e-4;

/// conv2d: input, weight and bias gradients of ⟨conv(x), r⟩.
inline std::vector<GradCheckResult> check_conv2d(std::uint64_t seed)
{
    CounterRng rng(seed);
    const int k = std::array{1, 3, 5}[rng.uniform_int(0, 2)];
    const int stride = static_cast<int>(rng.uniform_int(1, 2));
    const int pad = static_cast<int>(rng.uniform_int(0, k / 2));
    const int cin = static_cast<int>(rng.uniform_int(1, 3)), cout = static_cast<int>(rng.uniform_int(1, 3));
    const int n = static_cast<int>(rng.uniform_int(1, 2));
    const int h = static_cast<int>(rng.uniform_int(k, k + 5)), w = static_cast<int>(rng.uniform_int(k, k + 5));
    ConvParams<double> p(cout, cin, k, stride, pad);
    for (auto& v : p.weight) v = rng.uniform(-1, 1);
    for (auto& v : p.bias) v = rng.uniform(-1, 1);
    auto x = gc_detail::random_tensor(rng, n, cin, h, w);
    const auto y0 = conv2d_forward(x, p);
    const auto r = gc_detail::random_tensor(rng, y0.n, y0.c, y0.h, y0.w);
    const auto g = conv2d_backward(r, x, p);
    auto loss = [&] { return gc_detail::inner(conv2d_forward(x, p), r); };
    const std::string label = "x" + gc_detail::shape_label(x) + " k" + std::to_string(k) + " s" +
                              std::to_string(stride) + " p" + std::to_string(pad) + " out" + std::to_string(cout);
    return {{"conv2d.input", label, fd_deviation(x.data, loss, g.input.data), kLinearTolerance},
            {"conv2d.weight", label, fd_deviation(p.weight, loss, g.weight), kLinearTolerance},
            {"conv2d.bias", label, fd_deviation(p.bias, loss, g.bias), kLinearTolerance}};
}

inline std::vector<GradCheckResult> check_upconv2(std::uint64_t seed)
{
    CounterRng rng(seed);
    const int cin = static_cast<int>(rng.uniform_int(1, 4)), cout = static_cast<int>(rng.uniform_int(1, 4));
    const int n = static_cast<int>(rng.uniform_int(1, 2));
    const int h = static_cast<int>(rng.uniform_int(1, 5)), w = static_cast<int>(rng.uniform_int(1, 5));
    UpconvParams<double> p(cin, cout);
    for (auto& v : p.weight) v = rng.uniform(-1, 1);
    for (auto& v : p.bias) v = rng.uniform(-1, 1);
    auto x = gc_detail::random_tensor(rng, n, cin, h, w);
    const auto r = gc_detail::random_tensor(rng, n, cout, 2 * h, 2 * w);
    const auto g = upconv2_backward(r, x, p);
    auto loss = [&] { return gc_detail::inner(upconv2_forward(x, p), r); };
    const std::string label = "x" + gc_detail::shape_label(x) + " out" + std::to_string(cout);
    return {{"upconv2.input", label, fd_deviation(x.data, loss, g.input.data), kLinearTolerance},
            {"upconv2.weight", label, fd_deviation(p.weight, loss, g.weight), kLinearTolerance},
            {"upconv2.bias", label, fd_deviation(p.bias, loss, g.bias), kLinearTolerance}};
}

/// ReLU on inputs with |x| > 1e−3, so a 1e−5 step never crosses the kink.
inline std::vector<GradCheckResult> check_relu(std::uint64_t seed)
{
    CounterRng rng(seed);
    auto x = gc_detail::random_signed_away(rng, static_cast<int>(rng.uniform_int(1, 2)),
                                           static_cast<int>(rng.uniform_int(1, 3)), static_cast<int>(rng.uniform_int(1, 6)),
                                           static_cast<int>(rng.uniform_int(1, 6)), 1e-3);
    const auto r = gc_detail::random_tensor(rng, x.n, x.c, x.h, x.w);
    const auto g = relu_backward(r, x);
    auto loss = [&] { return gc_detail::inner(relu_forward(x), r); };
    return {{"relu.input", gc_detail::shape_label(x), fd_deviation(x.data, loss, g.data), kLinearTolerance}};
}

/// Max pooling on inputs whose window entries differ by more than the step.
inline std::vector<GradCheckResult> check_maxpool2(std::uint64_t seed)
{
    CounterRng rng(seed);
    const int n = static_cast<int>(rng.uniform_int(1, 2)), c = static_cast<int>(rng.uniform_int(1, 3));
    const int h = 2 * static_cast<int>(rng.uniform_int(1, 4)), w = 2 * static_cast<int>(rng.uniform_int(1, 4));
    Tensor4<double> x(n, c, h, w);
    // a random permutation of a well-separated ladder keeps every window tie-free
    std::vector<double> ladder(x.size());
    for (std::size_t i = 0; i < ladder.size(); ++i) ladder[i] = -1.0 + 2.0 * (static_cast<double>(i) + 0.5) / ladder.size();
    for (std::size_t i = ladder.size(); i > 1; --i)
        std::swap(ladder[i - 1], ladder[static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(i) - 1))]);
    x.data = ladder;
    const auto fwd = maxpool2_forward(x);
    const auto r = gc_detail::random_tensor(rng, n, c, h / 2, w / 2);
    const auto g = maxpool2_backward(r, fwd.argmax, x.shape());
    auto loss = [&] { return gc_detail::inner(maxpool2_forward(x).output, r); };
    return {{"maxpool2.input", gc_detail::shape_label(x), fd_deviation(x.data, loss, g.data), kLinearTolerance}};
}

/// Concatenation; each branch perturbed separately.
inline std::vector<GradCheckResult> check_concat(std::uint64_t seed)
{
    CounterRng rng(seed);
    const int n = static_cast<int>(rng.uniform_int(1, 2)), h = static_cast<int>(rng.uniform_int(1, 5)),
              w = static_cast<int>(rng.uniform_int(1, 5));
    auto a = gc_detail::random_tensor(rng, n, static_cast<int>(rng.uniform_int(1, 3)), h, w);
    auto b = gc_detail::random_tensor(rng, n, static_cast<int>(rng.uniform_int(1, 3)), h, w);
    const auto r = gc_detail::random_tensor(rng, n, a.c + b.c, h, w);
    const auto [ga, gb] = split_channels(r, a.c);
    auto loss = [&] { return gc_detail::inner(concat_channels(a, b), r); };
    const std::string label = gc_detail::shape_label(a) + "+" + gc_detail::shape_label(b);
    return {{"concat.first", label, fd_deviation(a.data, loss, ga.data), kLinearTolerance},
            {"concat.second", label, fd_deviation(b.data, loss, gb.data), kLinearTolerance}};
}

/// ℓ¹ loss on inputs with |pred − target| bounded away from 0.
inline std::vector<GradCheckResult> check_l1(std::uint64_t seed)
{
    CounterRng rng(seed);
    const int n = static_cast<int>(rng.uniform_int(1, 2)), c = static_cast<int>(rng.uniform_int(1, 2)),
              h = static_cast<int>(rng.uniform_int(1, 6)), w = static_cast<int>(rng.uniform_int(1, 6));
    const auto target = gc_detail::random_tensor(rng, n, c, h, w);
    auto pred = gc_detail::random_signed_away(rng, n, c, h, w, 1e-3);
    for (std::size_t i = 0; i < pred.size(); ++i) pred.data[i] += target.data[i];
    const auto g = l1_loss(pred, target).grad;
    auto loss = [&] { return l1_loss(pred, target).loss; };
    return {{"l1_loss.pred", gc_detail::shape_label(pred), fd_deviation(pred.data, loss, g.data), kNonlinearTolerance}};
}

/// conv → ReLU → conv, reduced by the ℓ¹ loss; all parameters and the input.
inline std::vector<GradCheckResult> check_stack(std::uint64_t seed)
{
    CounterRng rng(seed);
    const int c0 = static_cast<int>(rng.uniform_int(1, 2)), c1 = static_cast<int>(rng.uniform_int(2, 3));
    const int h = static_cast<int>(rng.uniform_int(3, 6)), w = static_cast<int>(rng.uniform_int(3, 6));
    auto p1 = ConvParams<double>::same(c1, c0, 3);
    auto p2 = ConvParams<double>::same(1, c1, 3);
    for (auto* p : {&p1, &p2}) {
        for (auto& v : p->weight) v = rng.uniform(-1, 1);
        for (auto& v : p->bias) v = rng.uniform(-0.5, 0.5);
    }
    auto x = gc_detail::random_tensor(rng, 1, c0, h, w);
    const auto target = gc_detail::random_tensor(rng, 1, 1, h, w, -3.0, 3.0);
    auto run = [&](bool grads) {
        const auto a = conv2d_forward(x, p1);
        const auto z = relu_forward(a);
        const auto y = conv2d_forward(z, p2);
        auto l = l1_loss(y, target);
        if (!grads) return std::tuple{l.loss, ConvGrads<double>{}, ConvGrads<double>{}};
        auto g2 = conv2d_backward(l.grad, z, p2);
        auto g1 = conv2d_backward(relu_backward(g2.input, a), x, p1);
        return std::tuple{l.loss, std::move(g1), std::move(g2)};
    };
    const auto [l0, g1, g2] = run(true);
    auto loss = [&] { return std::get<0>(run(false)); };
    const std::string label = "x" + gc_detail::shape_label(x) + " hidden" + std::to_string(c1);
    return {{"stack.input", label, fd_deviation(x.data, loss, g1.input.data), kNonlinearTolerance},
            {"stack.conv1.weight", label, fd_deviation(p1.weight, loss, g1.weight), kNonlinearTolerance},
            {"stack.conv1.bias", label, fd_deviation(p1.bias, loss, g1.bias), kNonlinearTolerance},
            {"stack.conv2.weight", label, fd_deviation(p2.weight, loss, g2.weight), kNonlinearTolerance},
            {"stack.conv2.bias", label, fd_deviation(p2.bias, loss, g2.bias), kNonlinearTolerance}};
}

/// Whole residual U-net against the ℓ¹ loss, on a subset of parameters from every layer.
inline std::vector<GradCheckResult> check_unet(std::uint64_t seed, UNetConfig config = {2, 3, 3, 8})
{
    UNet<double> net(config, seed);
    CounterRng rng(derive_seed(seed, 99));
    // nonzero biases keep ReLU inputs off the kink in a generic configuration
    for (auto& e : net.weights().entries())
        for (auto& v : *e.bias) v = rng.uniform(-0.1, 0.1);
    const int d = config.image_size;
    auto x = gc_detail::random_tensor(rng, 1, 1, d, d);
    const auto target = gc_detail::random_tensor(rng, 1, 1, d, d, -2.0, 2.0);
    UNetTape<double> tape;
    const auto pred = net.forward(x, &tape);
    const auto l = l1_loss(pred, target);
    Tensor4<double> gx;
    auto grads = net.backward(tape, l.grad, &gx);
    auto loss = [&] { return l1_loss(net.forward(x), target).loss; };

    std::vector<GradCheckResult> out;
    out.push_back({"unet.input", gc_detail::shape_label(x), fd_deviation(x.data, loss, gx.data), kNonlinearTolerance});
    auto we = net.weights().entries();
    auto ge = grads.entries();
    for (std::size_t i = 0; i < we.size(); ++i) {
        // up to 12 coordinates per tensor keep the check fast on larger configs
        auto check_some = [&](std::vector<double>& w, const std::vector<double>& g, const std::string& what) {
            const std::size_t stride = std::max<std::size_t>(1, w.size() / 12);
            std::vector<double> sub, sub_g;
            std::vector<std::size_t> idx;
            for (std::size_t k = 0; k < w.size(); k += stride) idx.push_back(k);
            for (auto k : idx) {
                sub.push_back(w[k]);
                sub_g.push_back(g[k]);
            }
            auto sub_loss = [&] {
                for (std::size_t j = 0; j < idx.size(); ++j) w[idx[j]] = sub[j];
                return loss();
            };
            const double dev = fd_deviation(sub, sub_loss, sub_g);
            for (std::size_t j = 0; j < idx.size(); ++j) w[idx[j]] = sub[j];
            out.push_back({"unet." + we[i].name + what, "d" + std::to_string(d), dev, kNonlinearTolerance});
        };
        check_some(*we[i].weight, *ge[i].weight, ".weight");
        check_some(*we[i].bias, *ge[i].bias, ".bias");
    }
    return out;
}

/// Every layer over `configurations` random cases, plus the stack and U-net checks.
inline std::vector<GradCheckResult> run_gradient_suite(std::uint64_t seed, int configurations = 10)
{
    std::vector<GradCheckResult> all;
    auto add = [&](std::vector<GradCheckResult> r) { all.insert(all.end(), r.begin(), r.end()); };
    for (int i = 0; i < configurations; ++i) {
        const auto s = derive_seed(seed, static_cast<std::uint64_t>(i));
        add(check_conv2d(derive_seed(s, 1)));
        add(check_upconv2(derive_seed(s, 2)));
        add(check_relu(derive_seed(s, 3)));
        add(check_maxpool2(derive_seed(s, 4)));
        add(check_concat(derive_seed(s, 5)));
        add(check_l1(derive_seed(s, 6)));
        add(check_stack(derive_seed(s, 7)));
    }
    add(check_unet(derive_seed(seed, 1000)));
    return all;
}

}  // namespace patrec::nn
