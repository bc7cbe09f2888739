#pragma once

// Weight file layout (little-endian):
//   "SMPW"  u32 version
//   spec:   u32 name_len, name, u32 kind, u32 input_dim, u32 output_dim,
//           u32 n_hidden, u32 hidden[n_hidden], u32 moe_index, u32 n, u32 k, f64 w_importance
//   u32 layer_count, then per layer u8 type (0 dense, 1 moe) followed by f32 blocks:
//     dense: weight (in x out, row-major), bias (out)
//     moe:   w_gate, w_noise, experts[n]
//   u32 CRC-32 of every preceding byte

#include <smoe/error.hpp>
#include <smoe/policy.hpp>

#include <boost/crc.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace smoe {

namespace weights_format {
inline constexpr std::array<char, 4> kMagic{'S', 'M', 'P', 'W'};
inline constexpr std::uint32_t kVersion = 1;
} // namespace weights_format

namespace detail {

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v)
    {
        for (int i = 0; i < 4; ++i)
            buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
    }
    void u64(std::uint64_t v)
    {
        for (int i = 0; i < 8; ++i)
            buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void size(std::size_t v)
    {
        require(v <= 0xFFFFFFFFu, ErrorKind::InvalidArgument, "weights: dimension too large for the file format");
        u32(static_cast<std::uint32_t>(v));
    }
    void bytes(std::string_view s) { buf_.append(s); }
    template <typename T>
    void floats(std::span<const T> v)
    {
        for (T x : v)
            u32(std::bit_cast<std::uint32_t>(static_cast<float>(x)));
    }
    std::string& buffer() { return buf_; }

private:
    std::string buf_;
};

class ByteReader {
public:
    ByteReader(const unsigned char* data, std::size_t size, std::string source) : p_(data), n_(size), src_(std::move(source)) {}

    std::uint8_t u8() { return *take(1); }
    std::uint32_t u32()
    {
        const auto* b = take(4);
        return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
    }
    std::uint64_t u64()
    {
        const std::uint64_t lo = u32();
        return lo | (std::uint64_t(u32()) << 32);
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str(std::size_t len)
    {
        const auto* b = take(len);
        return std::string(reinterpret_cast<const char*>(b), len);
    }
    template <typename T>
    void floats(std::span<T> out)
    {
        const auto* b = take(4 * out.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
            const auto* q = b + 4 * i;
            const std::uint32_t u = std::uint32_t(q[0]) | (std::uint32_t(q[1]) << 8) | (std::uint32_t(q[2]) << 16) | (std::uint32_t(q[3]) << 24);
            out[i] = static_cast<T>(std::bit_cast<float>(u));
        }
    }
    std::size_t offset() const noexcept { return off_; }
    std::size_t remaining() const noexcept { return n_ - off_; }

private:
    const unsigned char* take(std::size_t len)
    {
        require(len <= n_ - off_, ErrorKind::Format,
                src_ + ": truncated at byte offset " + std::to_string(off_) + " (needed " + std::to_string(len) + " more bytes)");
        const auto* b = p_ + off_;
        off_ += len;
        return b;
    }

    const unsigned char* p_;
    std::size_t n_;
    std::size_t off_ = 0;
    std::string src_;
};

inline std::uint32_t crc32(const void* data, std::size_t size)
{
    boost::crc_32_type crc;
    crc.process_bytes(data, size);
    return crc.checksum();
}

} // namespace detail

template <typename T>
std::string encode_weights(const PolicyNetwork<T>& net)
{
    const auto& s = net.spec;
    detail::ByteWriter w;
    w.bytes(std::string_view(weights_format::kMagic.data(), 4));
    w.u32(weights_format::kVersion);
    w.size(s.name.size());
    w.bytes(s.name);
    w.u32(s.kind == ActorKind::Moe ? 1u : 0u);
    w.size(s.input_dim);
    w.size(s.output_dim);
    w.size(s.hidden.size());
    for (auto h : s.hidden)
        w.size(h);
    w.size(s.moe_index);
    w.size(s.n);
    w.size(s.k);
    w.f64(s.w_importance);
    w.size(net.layers.size());
    for (const auto& layer : net.layers) {
        if (const auto* d = std::get_if<DenseLayer<T>>(&layer)) {
            w.u8(0);
            w.floats(std::span<const T>(d->weight.values()));
            w.floats(std::span<const T>(d->bias));
        } else {
            const auto& m = std::get<MoELayer<T>>(layer);
            w.u8(1);
            w.floats(std::span<const T>(m.w_gate.values()));
            w.floats(std::span<const T>(m.w_noise.values()));
            for (const auto& e : m.experts)
                w.floats(std::span<const T>(e.values()));
        }
    }
    const auto crc = detail::crc32(w.buffer().data(), w.buffer().size());
    w.u32(crc);
    return std::move(w.buffer());
}

template <typename T>
void save_weights(const std::string& path, const PolicyNetwork<T>& net)
{
    const auto bytes = encode_weights(net);
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot open '" + path + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorKind::Io, "write to '" + path + "' failed");
}

/// `expected`, when given, must equal the stored spec.
template <typename T>
PolicyNetwork<T> decode_weights(const std::vector<unsigned char>& bytes, const std::string& source = "<weights>",
                                const ActorSpec* expected = nullptr, Mode mode = Mode::Inference)
{
    require(bytes.size() >= 12, ErrorKind::Format, source + ": file too short to be a weight file");
    require(std::equal(weights_format::kMagic.begin(), weights_format::kMagic.end(), bytes.begin()), ErrorKind::Format,
            source + ": bad magic, not a weight file");
    detail::ByteReader r(bytes.data(), bytes.size() - 4, source);
    r.str(4);
    const auto version = r.u32();
    require(version == weights_format::kVersion, ErrorKind::Version,
            source + ": unsupported weight file version " + std::to_string(version) + " (expected " +
                std::to_string(weights_format::kVersion) + ")");
    detail::ByteReader tail(bytes.data() + bytes.size() - 4, 4, source);
    const auto stored = tail.u32();
    const auto actual = detail::crc32(bytes.data(), bytes.size() - 4);
    require(stored == actual, ErrorKind::Checksum, source + ": checksum mismatch, file is corrupt");

    ActorSpec spec;
    spec.name = r.str(r.u32());
    spec.kind = r.u32() == 1 ? ActorKind::Moe : ActorKind::Dense;
    spec.input_dim = r.u32();
    spec.output_dim = r.u32();
    spec.hidden.resize(r.u32());
    for (auto& h : spec.hidden)
        h = r.u32();
    spec.moe_index = r.u32();
    spec.n = r.u32();
    spec.k = r.u32();
    spec.w_importance = r.f64();
    try {
        spec.validate();
    } catch (const Error& e) {
        fail(ErrorKind::Format, source + ": stored spec is invalid: " + e.what());
    }
    if (expected && !(*expected == spec))
        fail(ErrorKind::SpecMismatch, source + ": file holds network '" + spec.name + "' which does not match requested '" + expected->name + "'");

    const auto floats = count_params(spec).total;
    require(floats <= r.remaining() / 4, ErrorKind::Format,
            source + ": truncated, spec needs " + std::to_string(floats) + " parameters but only " + std::to_string(r.remaining()) +
                " bytes follow byte offset " + std::to_string(r.offset()));

    Rng unused(0);
    auto net = build_actor<T>(spec, unused, mode);
    const auto layers = r.u32();
    require(layers == net.layers.size(), ErrorKind::Format,
            source + ": expected " + std::to_string(net.layers.size()) + " layers, found " + std::to_string(layers));
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const auto at = r.offset();
        const auto type = r.u8();
        if (auto* d = std::get_if<DenseLayer<T>>(&net.layers[i])) {
            require(type == 0, ErrorKind::Format, source + ": layer " + std::to_string(i) + " at byte offset " + std::to_string(at) + " should be dense");
            r.floats(d->weight.values());
            r.floats(std::span<T>(d->bias));
        } else {
            auto& m = std::get<MoELayer<T>>(net.layers[i]);
            require(type == 1, ErrorKind::Format, source + ": layer " + std::to_string(i) + " at byte offset " + std::to_string(at) + " should be moe");
            r.floats(m.w_gate.values());
            r.floats(m.w_noise.values());
            for (auto& e : m.experts)
                r.floats(e.values());
        }
    }
    require(r.remaining() == 0, ErrorKind::Format,
            source + ": " + std::to_string(r.remaining()) + " unexpected bytes before checksum at byte offset " + std::to_string(r.offset()));
    return net;
}

template <typename T>
PolicyNetwork<T> load_weights(const std::string& path, const ActorSpec* expected = nullptr, Mode mode = Mode::Inference)
{
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot open weight file '" + path + "'");
    const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_weights<T>(bytes, path, expected, mode);
}

} // namespace smoe
