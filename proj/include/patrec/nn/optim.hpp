#pragma once

#include <cmath>
#include <cstdint>
#include <span>

#include <nlohmann/json.hpp>

#include "patrec/core.hpp"

namespace patrec::nn {

struct TrainConfig {
    double learning_rate = 1e-3;
    double momentum = 0.99;
    int batch_size = 1;
    int epochs = 60;
    std::uint64_t seed = 1;  // shuffle order

    void validate() const
    {
        require(learning_rate > 0.0 && std::isfinite(learning_rate), "TrainConfig: learning rate must be positive");
        require(momentum >= 0.0 && momentum < 1.0, "TrainConfig: momentum must lie in [0, 1)");
        require(batch_size >= 1, "TrainConfig: batch size must be at least 1");
        require(epochs >= 1, "TrainConfig: epochs must be at least 1");
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c)
{
    j = {{"learning_rate", c.learning_rate},
         {"momentum", c.momentum},
         {"batch_size", c.batch_size},
         {"epochs", c.epochs},
         {"seed", c.seed},
         {"loss", "l1"}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c)
{
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.momentum = j.value("momentum", c.momentum);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    if (j.contains("loss")) require(j.at("loss") == "l1", "TrainConfig: only the l1 loss is supported");
}

/// v ← βv − ηg, then w ← w + v.
template <class T>
void sgd_momentum_step(std::span<T> weights, std::span<const T> grads, std::span<T> velocity, const TrainConfig& config)
{
    require(weights.size() == grads.size() && weights.size() == velocity.size(),
            "sgd_momentum_step: weights, gradients and velocity differ in size");
    const T beta = static_cast<T>(config.momentum);
    const T eta = static_cast<T>(config.learning_rate);
    for (std::size_t i = 0; i < weights.size(); ++i) {
        velocity[i] = beta * velocity[i] - eta * grads[i];
        weights[i] += velocity[i];
    }
}

}  // namespace patrec::nn
