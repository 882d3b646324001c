#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "patrec/core.hpp"
#include "patrec/nn/layers.hpp"
#include "patrec/nn/optim.hpp"
#include "patrec/nn/tensor.hpp"
#include "patrec/rng.hpp"

namespace patrec {

struct UNetConfig {
    int features = 32;  // channels at the first level; doubled per level
    int levels = 5;
    int kernel = 3;
    int image_size = 128;

    int channels(int level) const { return features << level; }

    void validate() const
    {
        require(features >= 1, "UNetConfig: features must be at least 1");
        require(levels >= 1 && levels <= 12, "UNetConfig: levels must be in [1, 12]");
        require(kernel >= 1 && kernel % 2 == 1, "UNetConfig: kernel size must be odd");
        require(image_size >= 1 && image_size % (1 << (levels - 1)) == 0,
                "UNetConfig: image size " + std::to_string(image_size) + " is not divisible by 2^(levels-1) = " +
                    std::to_string(1 << (levels - 1)));
    }

    bool operator==(const UNetConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const UNetConfig& c)
{
    j = {{"features", c.features}, {"levels", c.levels}, {"kernel", c.kernel}, {"image_size", c.image_size}};
}

inline void from_json(const nlohmann::json& j, UNetConfig& c)
{
    c.features = j.value("features", c.features);
    c.levels = j.value("levels", c.levels);
    c.kernel = j.value("kernel", c.kernel);
    c.image_size = j.value("image_size", c.image_size);
}

/// Every trainable tensor of the network. The same structure holds
/// gradients and momentum buffers.
template <class T>
struct UNetWeights {
    std::vector<nn::ConvParams<T>> encoder;    // two per level
    std::vector<nn::UpconvParams<T>> up;       // one per level below the deepest
    std::vector<nn::ConvParams<T>> decoder;    // two per level below the deepest
    nn::ConvParams<T> out;                     // 1×1 to one channel

    /// Layer parameter views in topological order.
    struct Entry {
        std::string name;
        std::vector<T>* weight;
        std::vector<T>* bias;
        std::vector<std::uint32_t> shape;  // weight shape
        int fan_in;
        int fan_out;
    };

    std::vector<Entry> entries()
    {
        std::vector<Entry> e;
        const int levels = static_cast<int>(encoder.size() / 2);
        auto conv = [&](std::string name, nn::ConvParams<T>& p) {
            e.push_back({std::move(name), &p.weight, &p.bias,
                         {std::uint32_t(p.out_channels), std::uint32_t(p.in_channels), std::uint32_t(p.kernel),
                          std::uint32_t(p.kernel)},
                         p.fan_in(), p.fan_out()});
        };
        for (int l = 0; l < levels; ++l) {
            conv("enc" + std::to_string(l) + "_conv1", encoder[2 * l]);
            conv("enc" + std::to_string(l) + "_conv2", encoder[2 * l + 1]);
        }
        for (int l = levels - 2; l >= 0; --l) {
            auto& u = up[l];
            e.push_back({"dec" + std::to_string(l) + "_up", &u.weight, &u.bias,
                         {std::uint32_t(u.in_channels), std::uint32_t(u.out_channels), 2u, 2u}, u.fan_in(),
                         u.fan_out()});
            conv("dec" + std::to_string(l) + "_conv1", decoder[2 * l]);
            conv("dec" + std::to_string(l) + "_conv2", decoder[2 * l + 1]);
        }
        conv("out_conv", out);
        return e;
    }

    std::size_t parameter_count()
    {
        std::size_t n = 0;
        for (auto& e : entries()) n += e.weight->size() + e.bias->size();
        return n;
    }

    void fill(T value)
    {
        for (auto& e : entries()) {
            std::fill(e.weight->begin(), e.weight->end(), value);
            std::fill(e.bias->begin(), e.bias->end(), value);
        }
    }
};

template <class T>
UNetWeights<T> make_unet_weights(const UNetConfig& c)
{
    c.validate();
    UNetWeights<T> w;
    for (int l = 0; l < c.levels; ++l) {
        const int in = l == 0 ? 1 : c.channels(l - 1);
        w.encoder.push_back(nn::ConvParams<T>::same(c.channels(l), in, c.kernel));
        w.encoder.push_back(nn::ConvParams<T>::same(c.channels(l), c.channels(l), c.kernel));
    }
    for (int l = 0; l + 1 < c.levels; ++l) {
        w.up.emplace_back(c.channels(l + 1), c.channels(l));
        w.decoder.push_back(nn::ConvParams<T>::same(c.channels(l), 2 * c.channels(l), c.kernel));
        w.decoder.push_back(nn::ConvParams<T>::same(c.channels(l), c.channels(l), c.kernel));
    }
    w.out = nn::ConvParams<T>(1, c.features, 1, 1, 0);
    return w;
}

/// Intermediate activations kept for the backward pass.
template <class T>
struct UNetTape {
    nn::Tensor4<T> input;
    std::vector<nn::Tensor4<T>> enc_in, enc_mid, enc_out;  // per level
    std::vector<std::vector<std::uint32_t>> pool_index;    // per level below the deepest
    std::vector<nn::Tensor4<T>> dec_in, dec_cat, dec_mid, dec_out;
    nn::Tensor4<T> output;
};

/// Residual U-net: Y = X + N(X), where N is the encoder/decoder trunk.
template <class T = float>
class UNet {
public:
    UNet() : UNet(UNetConfig{}, 0) {}
    UNet(UNetConfig config, std::uint64_t seed) : config_(config), weights_(make_unet_weights<T>(config))
    {
        initialize(seed);
    }

    /// Zero-initialized network (the identity map).
    static UNet zeros(UNetConfig config)
    {
        UNet u(config, 0);
        u.weights_.fill(T{});
        return u;
    }

    const UNetConfig& config() const { return config_; }
    UNetWeights<T>& weights() { return weights_; }
    const UNetWeights<T>& weights() const { return weights_; }

    /// Glorot-uniform weights with a per-layer seed; biases zero.
    void initialize(std::uint64_t seed)
    {
        std::uint64_t index = 0;
        for (auto& e : weights_.entries()) {
            *e.weight = nn::glorot_uniform<T>(e.fan_in, e.fan_out, e.weight->size(), derive_seed(seed, index++));
            std::fill(e.bias->begin(), e.bias->end(), T{});
        }
    }

    template <class U>
    UNet<U> cast() const
    {
        UNet<U> u = UNet<U>::zeros(config_);
        auto src = const_cast<UNetWeights<T>&>(weights_).entries();
        auto dst = u.weights().entries();
        for (std::size_t i = 0; i < src.size(); ++i) {
            std::transform(src[i].weight->begin(), src[i].weight->end(), dst[i].weight->begin(),
                           [](T v) { return static_cast<U>(v); });
            std::transform(src[i].bias->begin(), src[i].bias->end(), dst[i].bias->begin(),
                           [](T v) { return static_cast<U>(v); });
        }
        return u;
    }

    nn::Tensor4<T> forward(const nn::Tensor4<T>& x, UNetTape<T>* tape = nullptr) const
    {
        require(x.c == 1 && x.h == config_.image_size && x.w == config_.image_size,
                "UNet::forward: expected input (n,1," + std::to_string(config_.image_size) + "," +
                    std::to_string(config_.image_size) + "), got " + nn::shape_string(x));
        const int L = config_.levels;
        UNetTape<T> local;
        UNetTape<T>& t = tape ? *tape : local;
        t = UNetTape<T>{};
        t.input = x;
        nn::Tensor4<T> h = x;
        for (int l = 0; l < L; ++l) {
            if (l > 0) {
                auto pooled = nn::maxpool2_forward(t.enc_out[l - 1]);
                t.pool_index.push_back(std::move(pooled.argmax));
                h = std::move(pooled.output);
            }
            t.enc_in.push_back(h);
            t.enc_mid.push_back(nn::relu_forward(nn::conv2d_forward(h, weights_.encoder[2 * l])));
            t.enc_out.push_back(nn::relu_forward(nn::conv2d_forward(t.enc_mid[l], weights_.encoder[2 * l + 1])));
        }
        t.dec_in.resize(L);
        t.dec_cat.resize(L);
        t.dec_mid.resize(L);
        t.dec_out.resize(L);
        nn::Tensor4<T> below = t.enc_out[L - 1];
        for (int l = L - 2; l >= 0; --l) {
            t.dec_in[l] = below;
            t.dec_cat[l] = nn::concat_channels(t.enc_out[l], nn::upconv2_forward(below, weights_.up[l]));
            t.dec_mid[l] = nn::relu_forward(nn::conv2d_forward(t.dec_cat[l], weights_.decoder[2 * l]));
            t.dec_out[l] = nn::relu_forward(nn::conv2d_forward(t.dec_mid[l], weights_.decoder[2 * l + 1]));
            below = t.dec_out[l];
        }
        const nn::Tensor4<T>& top = L > 1 ? t.dec_out[0] : t.enc_out[0];
        nn::Tensor4<T> y = nn::conv2d_forward(top, weights_.out);
        for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += x.data[i];
        if (tape) t.output = y;
        return y;
    }

    Image forward(const Image& x) const
    {
        return nn::image_from_tensor(forward(nn::tensor_from_image<T>(x)));
    }

    /// Parameter gradients of a scalar loss whose gradient w.r.t. the output is grad_out.
    /// If grad_input is given it receives the gradient w.r.t. the network input.
    UNetWeights<T> backward(const UNetTape<T>& t, const nn::Tensor4<T>& grad_out,
                            nn::Tensor4<T>* grad_input = nullptr) const
    {
        const int L = config_.levels;
        UNetWeights<T> g = make_unet_weights<T>(config_);
        auto take = [](nn::ConvParams<T>& dst, nn::ConvGrads<T>& src) {
            dst.weight = std::move(src.weight);
            dst.bias = std::move(src.bias);
        };

        const nn::Tensor4<T>& top = L > 1 ? t.dec_out[0] : t.enc_out[0];
        auto go = nn::conv2d_backward(grad_out, top, weights_.out);
        take(g.out, go);
        nn::Tensor4<T> grad = std::move(go.input);  // w.r.t. the current decoder output

        std::vector<nn::Tensor4<T>> skip_grad(L);
        for (int l = 0; l + 1 < L; ++l) {
            auto g2 = nn::conv2d_backward(nn::relu_backward(grad, t.dec_out[l]), t.dec_mid[l], weights_.decoder[2 * l + 1]);
            take(g.decoder[2 * l + 1], g2);
            auto g1 = nn::conv2d_backward(nn::relu_backward(g2.input, t.dec_mid[l]), t.dec_cat[l], weights_.decoder[2 * l]);
            take(g.decoder[2 * l], g1);
            auto [gskip, gup] = nn::split_channels(g1.input, config_.channels(l));
            skip_grad[l] = std::move(gskip);
            auto gu = nn::upconv2_backward(gup, t.dec_in[l], weights_.up[l]);
            g.up[l].weight = std::move(gu.weight);
            g.up[l].bias = std::move(gu.bias);
            grad = std::move(gu.input);
        }
        // grad now refers to the deepest encoder output
        for (int l = L - 1; l >= 0; --l) {
            if (l < L - 1) {
                grad = nn::maxpool2_backward(grad, t.pool_index[l], t.enc_out[l].shape());
                for (std::size_t i = 0; i < grad.size(); ++i) grad.data[i] += skip_grad[l].data[i];
            }
            auto g2 = nn::conv2d_backward(nn::relu_backward(grad, t.enc_out[l]), t.enc_mid[l], weights_.encoder[2 * l + 1]);
            take(g.encoder[2 * l + 1], g2);
            const bool need_input = l > 0 || grad_input != nullptr;
            auto g1 = nn::conv2d_backward(nn::relu_backward(g2.input, t.enc_mid[l]), t.enc_in[l], weights_.encoder[2 * l],
                                          need_input);
            take(g.encoder[2 * l], g1);
            if (need_input) grad = std::move(g1.input);
        }
        if (grad_input) {
            *grad_input = grad;
            for (std::size_t i = 0; i < grad_input->size(); ++i) grad_input->data[i] += grad_out.data[i];
        }
        return g;
    }

    bool operator==(const UNet& o) const
    {
        if (!(config_ == o.config_)) return false;
        auto a = const_cast<UNetWeights<T>&>(weights_).entries();
        auto b = const_cast<UNetWeights<T>&>(o.weights_).entries();
        for (std::size_t i = 0; i < a.size(); ++i)
            if (*a[i].weight != *b[i].weight || *a[i].bias != *b[i].bias) return false;
        return true;
    }

private:
    UNetConfig config_;
    UNetWeights<T> weights_;
};

// ---------------------------------------------------------------------------
// Training

struct TrainingPair {
    Image input;   // X: FBP reconstruction
    Image target;  // Y: phantom
};

struct TrainHistory {
    std::vector<double> epoch_loss;  // mean training loss per epoch
    std::vector<double> step_loss;   // per-sample loss before each update
};

/// Trainer state: the network plus its momentum buffers.
template <class T = float>
class UNetTrainer {
public:
    explicit UNetTrainer(UNet<T>& net, nn::TrainConfig config)
        : net_(net), config_(config), velocity_(make_unet_weights<T>(net.config()))
    {
        config_.validate();
        velocity_.fill(T{});
    }

    UNetWeights<T>& velocity() { return velocity_; }
    const nn::TrainConfig& config() const { return config_; }

    /// Loss and parameter gradients on one sample.
    std::pair<double, UNetWeights<T>> loss_and_gradient(const nn::Tensor4<T>& x, const nn::Tensor4<T>& y) const
    {
        UNetTape<T> tape;
        const auto pred = net_.forward(x, &tape);
        auto loss = nn::l1_loss(pred, y);
        if (!std::isfinite(static_cast<double>(loss.loss)))
            throw NumericalError("UNet training: non-finite loss (training diverged)");
        return {static_cast<double>(loss.loss), net_.backward(tape, loss.grad)};
    }

    /// One optimizer update from a batch of samples (gradients averaged).
    double step(std::span<const nn::Tensor4<T>> inputs, std::span<const nn::Tensor4<T>> targets)
    {
        require(!inputs.empty() && inputs.size() == targets.size(), "UNetTrainer::step: empty or mismatched batch");
        auto [loss, grad] = loss_and_gradient(inputs[0], targets[0]);
        for (std::size_t b = 1; b < inputs.size(); ++b) {
            auto [l, g] = loss_and_gradient(inputs[b], targets[b]);
            loss += l;
            auto ge = g.entries();
            auto acc = grad.entries();
            for (std::size_t i = 0; i < ge.size(); ++i) {
                for (std::size_t k = 0; k < ge[i].weight->size(); ++k) (*acc[i].weight)[k] += (*ge[i].weight)[k];
                for (std::size_t k = 0; k < ge[i].bias->size(); ++k) (*acc[i].bias)[k] += (*ge[i].bias)[k];
            }
        }
        const T inv = T(1) / static_cast<T>(inputs.size());
        auto we = net_.weights().entries();
        auto ge = grad.entries();
        auto ve = velocity_.entries();
        for (std::size_t i = 0; i < we.size(); ++i) {
            if (inputs.size() > 1) {
                for (auto& v : *ge[i].weight) v *= inv;
                for (auto& v : *ge[i].bias) v *= inv;
            }
            nn::sgd_momentum_step<T>(*we[i].weight, *ge[i].weight, *ve[i].weight, config_);
            nn::sgd_momentum_step<T>(*we[i].bias, *ge[i].bias, *ve[i].bias, config_);
        }
        return loss / static_cast<double>(inputs.size());
    }

    /// Runs config.epochs passes with a seeded reshuffle per epoch.
    TrainHistory train(const std::vector<TrainingPair>& data,
                       const std::function<void(int epoch, double loss)>& on_epoch = {})
    {
        require(!data.empty(), "UNet training: dataset is empty");
        const int d = net_.config().image_size;
        std::vector<nn::Tensor4<T>> xs, ys;
        xs.reserve(data.size());
        ys.reserve(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) {
            require(data[i].input.size() == d && data[i].target.size() == d,
                    "UNet training: sample " + std::to_string(i) + " does not match the configured image size");
            xs.push_back(nn::tensor_from_image<T>(data[i].input));
            ys.push_back(nn::tensor_from_image<T>(data[i].target));
        }
        TrainHistory h;
        std::vector<std::size_t> order(data.size());
        const std::size_t bs = static_cast<std::size_t>(config_.batch_size);
        std::vector<nn::Tensor4<T>> bx, by;
        for (int epoch = 0; epoch < config_.epochs; ++epoch) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            CounterRng rng(derive_seed(config_.seed, static_cast<std::uint64_t>(epoch)));
            for (std::size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(i) - 1))]);
            double sum = 0.0;
            for (std::size_t s = 0; s < order.size(); s += bs) {
                bx.clear();
                by.clear();
                for (std::size_t k = s; k < std::min(order.size(), s + bs); ++k) {
                    bx.push_back(xs[order[k]]);
                    by.push_back(ys[order[k]]);
                }
                const double l = step(bx, by);
                h.step_loss.push_back(l);
                sum += l * static_cast<double>(bx.size());
            }
            h.epoch_loss.push_back(sum / static_cast<double>(order.size()));
            if (on_epoch) on_epoch(epoch, h.epoch_loss.back());
        }
        return h;
    }

private:
    UNet<T>& net_;
    nn::TrainConfig config_;
    UNetWeights<T> velocity_;
};

struct EvaluationResult {
    std::vector<double> errors;  // relative ℓ² per sample
    double mean = 0.0;
};

inline EvaluationResult summarize_errors(std::vector<double> errors)
{
    EvaluationResult r{std::move(errors), 0.0};
    require(!r.errors.empty(), "evaluate: dataset is empty");
    r.mean = std::accumulate(r.errors.begin(), r.errors.end(), 0.0) / static_cast<double>(r.errors.size());
    return r;
}

/// Relative ℓ² error of the network output against each target.
template <class T>
EvaluationResult evaluate(const UNet<T>& net, const std::vector<TrainingPair>& data)
{
    require(!data.empty(), "evaluate: dataset is empty");
    std::vector<double> errors(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) errors[i] = rel_l2_error(net.forward(data[i].input), data[i].target);
    return summarize_errors(std::move(errors));
}

}  // namespace patrec
