#pragma once

// TensorFile binary format, all integers little-endian:
//
//   "PATT"            4-byte magic
//   u8  version       = 1
//   u8  dtype         1 = float32, 2 = float64
//   u8  rank          >= 1
//   u32 dims[rank]
//   u32 name_length   followed by name_length bytes of UTF-8
//   payload           prod(dims) elements, IEEE-754 little-endian

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "patrec/core.hpp"

namespace patrec {

class ParseError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

inline constexpr char kTensorMagic[4] = {'P', 'A', 'T', 'T'};
inline constexpr std::uint8_t kTensorVersion = 1;

struct NamedArray {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::variant<std::vector<float>, std::vector<double>> values;

    DType dtype() const { return values.index() == 0 ? DType::f32 : DType::f64; }

    std::size_t element_count() const
    {
        return std::visit([](const auto& v) { return v.size(); }, values);
    }

    std::vector<double> to_doubles() const
    {
        return std::visit([](const auto& v) { return std::vector<double>(v.begin(), v.end()); }, values);
    }

    friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

inline NamedArray make_array(std::string name, std::vector<std::uint32_t> dims, std::vector<double> values)
{
    return {std::move(name), std::move(dims), std::move(values)};
}

inline NamedArray make_array(std::string name, std::vector<std::uint32_t> dims, std::vector<float> values)
{
    return {std::move(name), std::move(dims), std::move(values)};
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v)
{
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class ByteReader {
public:
    explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

    void need(std::size_t n, const char* what) const
    {
        if (pos_ + n > bytes_.size())
            throw ParseError(std::string("tensor file truncated while reading ") + what);
    }

    std::uint8_t u8(const char* what)
    {
        need(1, what);
        return static_cast<std::uint8_t>(bytes_[pos_++]);
    }

    std::uint32_t u32(const char* what)
    {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint64_t u64(const char* what)
    {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }

    std::string_view take(std::size_t n, const char* what)
    {
        need(n, what);
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t position() const { return pos_; }

private:
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path.string() + " for reading");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ValidationError("write failed for " + path.string());
}

}  // namespace detail

inline std::string encode_tensor(const NamedArray& a)
{
    require(!a.dims.empty(), "tensor file: rank must be at least 1");
    require(a.dims.size() <= 255, "tensor file: rank exceeds 255");
    std::size_t count = 1;
    for (auto d : a.dims) count *= d;
    require(count == a.element_count(), "tensor file: payload length does not match dimensions");

    std::string out(kTensorMagic, 4);
    out.push_back(static_cast<char>(kTensorVersion));
    out.push_back(static_cast<char>(a.dtype()));
    out.push_back(static_cast<char>(a.dims.size()));
    for (auto d : a.dims) detail::put_u32(out, d);
    detail::put_u32(out, static_cast<std::uint32_t>(a.name.size()));
    out += a.name;
    std::visit(
        [&](const auto& v) {
            for (auto x : v) {
                if constexpr (std::is_same_v<std::decay_t<decltype(x)>, float>)
                    detail::put_u32(out, std::bit_cast<std::uint32_t>(x));
                else
                    detail::put_u64(out, std::bit_cast<std::uint64_t>(x));
            }
        },
        a.values);
    return out;
}

/// Decode one tensor starting at the reader position; leaves the reader after the payload.
inline NamedArray decode_tensor(detail::ByteReader& in)
{
    const auto magic = in.take(4, "magic");
    if (std::memcmp(magic.data(), kTensorMagic, 4) != 0) throw ParseError("tensor file: bad magic");
    const auto version = in.u8("version");
    if (version != kTensorVersion) throw ParseError("tensor file: unsupported version " + std::to_string(version));
    const auto dtype = in.u8("dtype");
    if (dtype != 1 && dtype != 2) throw ParseError("tensor file: unknown dtype code " + std::to_string(dtype));
    const auto rank = in.u8("rank");
    if (rank == 0) throw ParseError("tensor file: rank must be at least 1");

    NamedArray a;
    std::uint64_t count = 1;
    for (int i = 0; i < rank; ++i) {
        a.dims.push_back(in.u32("dims"));
        count *= a.dims.back();
        if (count > (std::uint64_t{1} << 40)) throw ParseError("tensor file: implausible shape");
    }
    const auto name_len = in.u32("name length");
    a.name = std::string(in.take(name_len, "name"));

    if (dtype == 1) {
        in.need(count * 4, "payload");
        std::vector<float> v(count);
        for (auto& x : v) x = std::bit_cast<float>(in.u32("payload"));
        a.values = std::move(v);
    } else {
        in.need(count * 8, "payload");
        std::vector<double> v(count);
        for (auto& x : v) x = std::bit_cast<double>(in.u64("payload"));
        a.values = std::move(v);
    }
    return a;
}

inline NamedArray decode_tensor(std::string_view bytes)
{
    detail::ByteReader in(bytes);
    return decode_tensor(in);
}

inline void save_tensor(const std::filesystem::path& path, const NamedArray& a)
{
    detail::write_file(path, encode_tensor(a));
}

inline NamedArray load_tensor(const std::filesystem::path& path)
{
    return decode_tensor(detail::read_file(path));
}

inline NamedArray to_array(const Image& img, std::string name = "image")
{
    const auto d = static_cast<std::uint32_t>(img.size());
    return make_array(std::move(name), {d, d}, img.raw());
}

inline Image image_from_array(const NamedArray& a)
{
    require(a.dims.size() == 2 && a.dims[0] == a.dims[1], "image tensor must be square rank-2");
    return Image(Grid(static_cast<int>(a.dims[0])), a.to_doubles());
}

inline NamedArray to_array(const PressureData& p, std::string name = "pressure")
{
    return make_array(std::move(name),
                      {static_cast<std::uint32_t>(p.geometry().detectors()),
                       static_cast<std::uint32_t>(p.geometry().time_samples())},
                      p.raw());
}

inline PressureData pressure_from_array(const NamedArray& a, const Geometry& g)
{
    require(a.dims.size() == 2 && a.dims[0] == static_cast<std::uint32_t>(g.detectors()) &&
                a.dims[1] == static_cast<std::uint32_t>(g.time_samples()),
            "pressure tensor shape does not match geometry");
    return PressureData(g, a.to_doubles());
}

}  // namespace patrec
