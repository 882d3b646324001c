#pragma once

// Model container, integers little-endian:
//
//   "PATW"            4-byte magic
//   u8  version       = 1
//   u32 index_length  followed by a UTF-8 JSON index
//   blobs             concatenated TensorFile records
//
// The index holds the network config, optional metadata, and per layer the
// byte offset (relative to the first blob) and shape of every tensor.

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "patrec/tensor_file.hpp"
#include "patrec/unet.hpp"

namespace patrec {

inline constexpr char kModelMagic[4] = {'P', 'A', 'T', 'W'};
inline constexpr std::uint8_t kModelVersion = 1;

namespace detail {

template <class T>
NamedArray weight_array(std::string name, const std::vector<std::uint32_t>& shape, const std::vector<T>& v)
{
    NamedArray a{std::move(name), shape, {}};
    if constexpr (std::is_same_v<T, float>)
        a.values = v;
    else
        a.values = std::vector<double>(v.begin(), v.end());
    return a;
}

template <class T>
void assign_values(const NamedArray& a, std::vector<T>& dst, const std::string& what)
{
    if (a.element_count() != dst.size())
        throw ParseError("model file: tensor '" + what + "' has " + std::to_string(a.element_count()) +
                         " elements, expected " + std::to_string(dst.size()));
    std::visit([&](const auto& v) { std::transform(v.begin(), v.end(), dst.begin(), [](auto x) { return T(x); }); },
               a.values);
}

}  // namespace detail

template <class T>
std::string encode_model(const UNet<T>& net, const nlohmann::json& metadata = nlohmann::json::object(),
                         const UNetWeights<T>* velocity = nullptr)
{
    std::string blobs;
    nlohmann::json layers = nlohmann::json::array();
    auto entries = const_cast<UNetWeights<T>&>(net.weights()).entries();
    std::vector<typename UNetWeights<T>::Entry> vel;
    if (velocity) vel = const_cast<UNetWeights<T>*>(velocity)->entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& e = entries[i];
        auto put = [&](const std::string& name, const std::vector<std::uint32_t>& shape, const std::vector<T>& v) {
            nlohmann::json rec = {{"offset", blobs.size()}, {"shape", shape}};
            blobs += encode_tensor(detail::weight_array(name, shape, v));
            return rec;
        };
        nlohmann::json layer = {{"name", e.name}, {"fan_in", e.fan_in}, {"fan_out", e.fan_out}};
        const std::vector<std::uint32_t> bshape{static_cast<std::uint32_t>(e.bias->size())};
        layer["weight"] = put(e.name + ".weight", e.shape, *e.weight);
        layer["bias"] = put(e.name + ".bias", bshape, *e.bias);
        if (velocity) {
            layer["weight_velocity"] = put(e.name + ".weight_velocity", e.shape, *vel[i].weight);
            layer["bias_velocity"] = put(e.name + ".bias_velocity", bshape, *vel[i].bias);
        }
        layers.push_back(std::move(layer));
    }
    const nlohmann::json index = {{"config", net.config()}, {"metadata", metadata}, {"layers", layers}};
    const std::string text = index.dump();
    std::string out(kModelMagic, 4);
    out.push_back(static_cast<char>(kModelVersion));
    detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
    out += text;
    out += blobs;
    return out;
}

template <class T>
struct LoadedModel {
    UNet<T> net;
    nlohmann::json metadata;
    std::optional<UNetWeights<T>> velocity;
};

template <class T = float>
LoadedModel<T> decode_model(std::string_view bytes)
{
    detail::ByteReader in(bytes);
    const auto magic = in.take(4, "magic");
    if (std::memcmp(magic.data(), kModelMagic, 4) != 0) throw ParseError("model file: bad magic");
    const auto version = in.u8("version");
    if (version != kModelVersion) throw ParseError("model file: unsupported version " + std::to_string(version));
    const auto len = in.u32("index length");
    nlohmann::json index;
    try {
        index = nlohmann::json::parse(in.take(len, "index"));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("model file: malformed index: ") + e.what());
    }
    const std::string_view blobs = bytes.substr(in.position());

    UNetConfig config;
    try {
        config = index.at("config").get<UNetConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("model file: bad config: ") + e.what());
    }
    LoadedModel<T> m{UNet<T>::zeros(config), index.value("metadata", nlohmann::json::object()), std::nullopt};
    auto entries = m.net.weights().entries();
    const auto& layers = index.at("layers");
    if (layers.size() != entries.size())
        throw ParseError("model file: expected " + std::to_string(entries.size()) + " layers, found " +
                         std::to_string(layers.size()));

    auto read_at = [&](const nlohmann::json& rec, std::vector<T>& dst, const std::string& what) {
        const auto offset = rec.at("offset").get<std::size_t>();
        if (offset >= blobs.size()) throw ParseError("model file: offset out of range for '" + what + "'");
        detail::assign_values(decode_tensor(blobs.substr(offset)), dst, what);
    };
    const bool has_velocity = !layers.empty() && layers[0].contains("weight_velocity");
    std::vector<typename UNetWeights<T>::Entry> vel;
    if (has_velocity) {
        m.velocity = make_unet_weights<T>(config);
        vel = m.velocity->entries();
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& layer = layers[i];
        const auto name = layer.at("name").get<std::string>();
        if (name != entries[i].name)
            throw ParseError("model file: layer " + std::to_string(i) + " is '" + name + "', expected '" +
                             entries[i].name + "'");
        read_at(layer.at("weight"), *entries[i].weight, name + ".weight");
        read_at(layer.at("bias"), *entries[i].bias, name + ".bias");
        if (has_velocity) {
            read_at(layer.at("weight_velocity"), *vel[i].weight, name + ".weight_velocity");
            read_at(layer.at("bias_velocity"), *vel[i].bias, name + ".bias_velocity");
        }
    }
    return m;
}

template <class T>
void save_model(const std::filesystem::path& path, const UNet<T>& net,
                const nlohmann::json& metadata = nlohmann::json::object(), const UNetWeights<T>* velocity = nullptr)
{
    detail::write_file(path, encode_model(net, metadata, velocity));
}

template <class T = float>
LoadedModel<T> load_model(const std::filesystem::path& path)
{
    return decode_model<T>(detail::read_file(path));
}

}  // namespace patrec
