#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "patrec/core.hpp"

namespace patrec::nn {

/// Dense NCHW tensor.
template <class T>
struct Tensor4 {
    int n = 1, c = 1, h = 1, w = 1;
    std::vector<T> data;

    Tensor4() : data(1, T{}) {}
    Tensor4(int n_, int c_, int h_, int w_, T fill = T{}) : n(n_), c(c_), h(h_), w(w_)
    {
        require(n >= 1 && c >= 1 && h >= 1 && w >= 1, "Tensor4: all dimensions must be at least 1");
        data.assign(static_cast<std::size_t>(n) * c * h * w, fill);
    }

    std::size_t size() const { return data.size(); }
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }
    std::array<int, 4> shape() const { return {n, c, h, w}; }
    bool same_shape(const Tensor4& o) const { return shape() == o.shape(); }

    T& at(int in, int ic, int iy, int ix)
    {
        return data[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
    }
    T at(int in, int ic, int iy, int ix) const
    {
        return data[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
    }

    T* sample(int in) { return data.data() + in * sample_size(); }
    const T* sample(int in) const { return data.data() + in * sample_size(); }

    template <class U>
    Tensor4<U> cast() const
    {
        Tensor4<U> out(n, c, h, w);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

template <class T>
std::string shape_string(const Tensor4<T>& t)
{
    return "(" + std::to_string(t.n) + "," + std::to_string(t.c) + "," + std::to_string(t.h) + "," +
           std::to_string(t.w) + ")";
}

template <class T>
Tensor4<T> tensor_from_image(const Image& img)
{
    Tensor4<T> t(1, 1, img.size(), img.size());
    const auto v = img.values();
    for (std::size_t i = 0; i < v.size(); ++i) t.data[i] = static_cast<T>(v[i]);
    return t;
}

template <class T>
Image image_from_tensor(const Tensor4<T>& t)
{
    require(t.n == 1 && t.c == 1 && t.h == t.w, "image_from_tensor: expected a (1,1,d,d) tensor");
    Image img{Grid(t.h)};
    auto v = img.values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(t.data[i]);
    return img;
}

}  // namespace patrec::nn
