#include <cmath>

#include <gtest/gtest.h>

#include "patrec/model_io.hpp"
#include "patrec/rng.hpp"
#include "patrec/unet.hpp"

using namespace patrec;
using nn::Tensor4;

namespace {

template <class T>
Tensor4<T> random_input(std::uint64_t seed, int d)
{
    CounterRng rng(seed);
    Tensor4<T> t(1, 1, d, d);
    for (auto& v : t.data) v = static_cast<T>(rng.uniform(-1.0, 1.0));
    return t;
}

template <class T>
double grad_norm2(UNetWeights<T>& g)
{
    double s = 0.0;
    for (auto& e : g.entries()) {
        for (T v : *e.weight) s += double(v) * v;
        for (T v : *e.bias) s += double(v) * v;
    }
    return s;
}

}  // namespace

TEST(UNetConfig, ChannelSequence)
{
    const UNetConfig c;
    const int expect[] = {32, 64, 128, 256, 512};
    for (int l = 0; l < 5; ++l) EXPECT_EQ(c.channels(l), expect[l]);
}

TEST(UNetConfig, SizeMustBeDivisible)
{
    EXPECT_THROW((UNetConfig{32, 5, 3, 100}.validate()), ValidationError);
    EXPECT_NO_THROW((UNetConfig{32, 5, 3, 128}.validate()));
    EXPECT_THROW((UNetConfig{32, 5, 2, 128}.validate()), ValidationError);
    EXPECT_THROW((UNet<float>(UNetConfig{4, 3, 3, 14}, 1)), ValidationError);
}

TEST(UNetConfig, JsonRoundTrip)
{
    const UNetConfig c{16, 4, 3, 64};
    const nlohmann::json j = c;
    EXPECT_EQ(j.get<UNetConfig>(), c);
}

TEST(UNet, LayerListAndParameterCount)
{
    UNet<float> net(UNetConfig{}, 1);
    auto entries = net.weights().entries();
    ASSERT_EQ(entries.size(), 23u);
    EXPECT_EQ(entries.front().name, "enc0_conv1");
    EXPECT_EQ(entries[10].name, "dec3_up");
    EXPECT_EQ(entries.back().name, "out_conv");

    // independent count: two 3×3 convs per encoder level, upconv plus two
    // 3×3 convs per decoder level, 1×1 output
    std::size_t n = 0;
    const int F = 32, L = 5;
    for (int l = 0; l < L; ++l) {
        const std::size_t c = F << l, in = l == 0 ? 1 : c / 2;
        n += 9 * in * c + c + 9 * c * c + c;
    }
    for (int l = 0; l + 1 < L; ++l) {
        const std::size_t c = F << l;
        n += 4 * (2 * c) * c + c;            // upconv 2c → c
        n += 9 * (2 * c) * c + c + 9 * c * c + c;
    }
    n += F + 1;
    EXPECT_EQ(net.weights().parameter_count(), n);
}

TEST(UNet, MinimalNetworkRuns)
{
    const UNet<double> net(UNetConfig{1, 2, 3, 8}, 3);
    const auto x = random_input<double>(1, 8);
    const auto y = net.forward(x);
    EXPECT_EQ(y.shape(), x.shape());
    for (double v : y.data) EXPECT_TRUE(std::isfinite(v));
}

TEST(UNet, SameSeedSameWeights)
{
    const UNetConfig c{4, 3, 3, 16};
    EXPECT_TRUE(UNet<float>(c, 9) == UNet<float>(c, 9));
    EXPECT_FALSE(UNet<float>(c, 9) == UNet<float>(c, 10));
}

TEST(UNet, InitializationFollowsGlorotBounds)
{
    UNet<double> net(UNetConfig{8, 3, 3, 16}, 4);
    for (auto& e : net.weights().entries()) {
        const double H = std::sqrt(6.0 / (e.fan_in + e.fan_out));
        for (double v : *e.weight) EXPECT_LE(std::abs(v), H) << e.name;
        for (double v : *e.bias) EXPECT_EQ(v, 0.0);
    }
}

TEST(UNet, ZeroWeightsGiveIdentity)
{
    const auto net = UNet<float>::zeros(UNetConfig{4, 3, 3, 16});
    const auto x = random_input<float>(2, 16);
    EXPECT_EQ(net.forward(x).data, x.data);
}

TEST(UNet, BatchedForwardMatchesPerSample)
{
    const UNet<double> net(UNetConfig{4, 3, 3, 16}, 5);
    const auto a = random_input<double>(1, 16), b = random_input<double>(2, 16);
    Tensor4<double> ab(2, 1, 16, 16);
    std::copy(a.data.begin(), a.data.end(), ab.sample(0));
    std::copy(b.data.begin(), b.data.end(), ab.sample(1));
    const auto y = net.forward(ab);
    const auto ya = net.forward(a), yb = net.forward(b);
    for (std::size_t i = 0; i < ya.size(); ++i) {
        EXPECT_NEAR(y.sample(0)[i], ya.data[i], 1e-12);
        EXPECT_NEAR(y.sample(1)[i], yb.data[i], 1e-12);
    }
}

TEST(UNet, WrongInputShapeRejected)
{
    const UNet<float> net(UNetConfig{4, 3, 3, 16}, 5);
    EXPECT_THROW(net.forward(random_input<float>(1, 32)), ValidationError);
}

TEST(UNetTrainer, OverfitsSinglePair)
{
    // the identity target is reachable by shrinking the trunk to zero
    UNet<double> net(UNetConfig{4, 3, 3, 16}, 6);
    nn::TrainConfig c;
    c.learning_rate = 1e-3;
    c.momentum = 0.9;
    UNetTrainer<double> trainer(net, c);
    const auto x = random_input<double>(3, 16);
    const std::vector<Tensor4<double>> xs{x}, ys{x};
    const double first = trainer.step(xs, ys);
    double last = first;
    for (int s = 1; s < 200; ++s) last = trainer.step(xs, ys);
    EXPECT_LT(last, 0.1 * first);
}

TEST(UNetTrainer, TrainingIsReproducible)
{
    const UNetConfig cfg{2, 2, 3, 8};
    std::vector<TrainingPair> data;
    for (int i = 0; i < 4; ++i) {
        const auto x = nn::image_from_tensor(random_input<double>(10 + i, 8));
        auto y = x;
        for (auto& v : y.values()) v = std::max(0.0, v);
        data.push_back({x, y});
    }
    nn::TrainConfig c;
    c.epochs = 3;
    c.learning_rate = 1e-2;
    c.momentum = 0.9;
    auto run = [&] {
        UNet<float> net(cfg, 7);
        UNetTrainer<float> trainer(net, c);
        return trainer.train(data);
    };
    const auto h1 = run(), h2 = run();
    EXPECT_EQ(h1.step_loss, h2.step_loss);
    EXPECT_EQ(h1.epoch_loss, h2.epoch_loss);
    EXPECT_EQ(h1.step_loss.size(), 12u);
}

TEST(UNetTrainer, FirstOrderDecrease)
{
    // one plain gradient step changes the loss by about −η‖∇‖²
    UNet<double> net(UNetConfig{4, 3, 3, 16}, 8);
    nn::TrainConfig c;
    c.learning_rate = 1e-4;
    c.momentum = 0.0;
    UNetTrainer<double> trainer(net, c);
    const auto x = random_input<double>(4, 16);
    const auto y = random_input<double>(5, 16);
    auto [before, grad] = trainer.loss_and_gradient(x, y);
    const double predicted = -c.learning_rate * grad_norm2(grad);
    const std::vector<Tensor4<double>> xs{x}, ys{y};
    trainer.step(xs, ys);
    const double after = trainer.loss_and_gradient(x, y).first;
    ASSERT_LT(predicted, 0.0);
    EXPECT_NEAR((after - before) / predicted, 1.0, 0.25);
}

TEST(UNetTrainer, DuplicatedBatchEqualsSingleSample)
{
    const UNetConfig cfg{2, 2, 3, 8};
    const auto x = random_input<double>(1, 8), y = random_input<double>(2, 8);
    nn::TrainConfig c;
    c.learning_rate = 1e-2;
    UNet<double> a(cfg, 3), b(cfg, 3);
    UNetTrainer<double> ta(a, c), tb(b, c);
    const std::vector<Tensor4<double>> x1{x}, y1{y}, x2{x, x}, y2{y, y};
    EXPECT_EQ(ta.step(x1, y1), tb.step(x2, y2));
    EXPECT_TRUE(a == b);
}

TEST(UNetTrainer, NonFiniteLossIsReported)
{
    UNet<float> net(UNetConfig{2, 2, 3, 8}, 1);
    UNetTrainer<float> trainer(net, {});
    auto x = random_input<float>(1, 8);
    x.data[5] = std::nanf("");
    EXPECT_THROW(trainer.loss_and_gradient(x, random_input<float>(2, 8)), NumericalError);
}

TEST(ModelIo, RoundTripGivesIdenticalOutputs)
{
    UNet<float> net(UNetConfig{4, 3, 3, 16}, 11);
    UNetTrainer<float> trainer(net, {});
    const std::vector<Tensor4<float>> xs{random_input<float>(1, 16)}, ys{random_input<float>(2, 16)};
    trainer.step(xs, ys);
    const auto bytes = encode_model(net, {{"note", "unit"}}, &trainer.velocity());
    const auto loaded = decode_model<float>(bytes);
    EXPECT_TRUE(loaded.net == net);
    EXPECT_EQ(loaded.metadata.at("note"), "unit");
    ASSERT_TRUE(loaded.velocity.has_value());
    auto v0 = trainer.velocity().entries();
    auto v1 = const_cast<UNetWeights<float>&>(*loaded.velocity).entries();
    for (std::size_t i = 0; i < v0.size(); ++i) EXPECT_EQ(*v0[i].weight, *v1[i].weight);
    EXPECT_EQ(loaded.net.forward(xs[0]).data, net.forward(xs[0]).data);
    EXPECT_EQ(encode_model(loaded.net, loaded.metadata, &*loaded.velocity), bytes);
}

TEST(ModelIo, WithoutVelocity)
{
    const UNet<float> net(UNetConfig{2, 2, 3, 8}, 1);
    EXPECT_FALSE(decode_model<float>(encode_model(net)).velocity.has_value());
}

TEST(ModelIo, MalformedFilesRejected)
{
    const UNet<float> net(UNetConfig{2, 2, 3, 8}, 1);
    const auto bytes = encode_model(net);
    EXPECT_THROW(decode_model<float>(bytes.substr(0, 3)), ParseError);
    EXPECT_THROW(decode_model<float>(bytes.substr(0, bytes.size() - 5)), ParseError);
    auto bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(decode_model<float>(bad), ParseError);
    bad = bytes;
    bad[4] = 9;  // version
    EXPECT_THROW(decode_model<float>(bad), ParseError);
}

TEST(Evaluate, PerfectAndIdentityModels)
{
    const Grid g(16);
    std::vector<TrainingPair> data;
    for (int i = 0; i < 3; ++i) {
        const auto x = nn::image_from_tensor(random_input<double>(20 + i, 16));
        auto t = x;
        for (auto& v : t.values()) v += 0.5;
        data.push_back({x, t});
    }
    const auto identity = UNet<double>::zeros(UNetConfig{2, 2, 3, 16});
    const auto r = evaluate(identity, data);
    for (std::size_t i = 0; i < data.size(); ++i) EXPECT_EQ(r.errors[i], rel_l2_error(data[i].input, data[i].target));

    auto shifted = UNet<double>::zeros(UNetConfig{2, 2, 3, 16});
    shifted.weights().out.bias[0] = 0.5;  // adds the constant offset
    const auto p = evaluate(shifted, data);
    EXPECT_NEAR(p.mean, 0.0, 1e-15);
    EXPECT_THROW(evaluate(identity, {}), ValidationError);
}
