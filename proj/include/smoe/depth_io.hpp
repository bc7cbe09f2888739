#pragma once

// Depth image files.
//
// PGM (P5, 16-bit big-endian): samples are millimeters unless a header
// comment `# depth_scale=<meters per unit>` overrides the scale.
// PFM (Pf, single channel 32-bit float, meters): rows stored bottom-to-top;
// a negative scale marks little-endian data. Output is always little-endian.

#include <smoe/config.hpp>
#include <smoe/depth.hpp>
#include <smoe/error.hpp>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace smoe {

namespace detail {

class HeaderReader {
public:
    explicit HeaderReader(const std::vector<unsigned char>& bytes) : bytes_(bytes) {}

    std::size_t offset() const noexcept { return pos_; }

    [[noreturn]] void error(const std::string& what) const
    {
        fail(ErrorKind::Format, what + " at byte offset " + std::to_string(pos_));
    }

    /// Skips whitespace and '#' comments; comments are collected.
    void skip_space()
    {
        while (pos_ < bytes_.size()) {
            const char c = static_cast<char>(bytes_[pos_]);
            if (c == '#') {
                std::string comment;
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n')
                    comment.push_back(static_cast<char>(bytes_[pos_++]));
                comments.push_back(comment);
            } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
                ++pos_;
            } else {
                break;
            }
        }
    }

    std::string token()
    {
        skip_space();
        std::string t;
        while (pos_ < bytes_.size()) {
            const char c = static_cast<char>(bytes_[pos_]);
            if (c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '#')
                break;
            t.push_back(c);
            ++pos_;
        }
        if (t.empty())
            error("unexpected end of header");
        return t;
    }

    std::size_t number()
    {
        const std::size_t at = pos_;
        const std::string t = token();
        std::size_t v = 0;
        for (char c : t) {
            if (c < '0' || c > '9') {
                pos_ = at;
                error("expected an unsigned integer, found '" + t + "'");
            }
            v = v * 10 + static_cast<std::size_t>(c - '0');
        }
        return v;
    }

    /// Exactly one whitespace byte separates the header from the raster.
    void end_of_header()
    {
        if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_]))
            error("expected a single whitespace byte before the raster");
        ++pos_;
    }

    std::vector<std::string> comments;

private:
    const std::vector<unsigned char>& bytes_;
    std::size_t pos_ = 0;
};

inline std::vector<unsigned char> read_all(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_all(const std::string& path, const std::string& bytes)
{
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write '" + path + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorKind::Io, "write failed for '" + path + "'");
}

} // namespace detail

inline DepthImage parse_pgm(const std::vector<unsigned char>& bytes)
{
    detail::HeaderReader h(bytes);
    if (h.token() != "P5")
        fail(ErrorKind::Format, "not a binary PGM (expected 'P5') at byte offset 0");
    const std::size_t width = h.number();
    const std::size_t height = h.number();
    const std::size_t maxval = h.number();
    if (width == 0 || height == 0)
        h.error("zero image dimension");
    if (maxval == 0 || maxval > 65535)
        h.error("maxval must be in [1, 65535]");
    h.end_of_header();
    double scale = 0.001;
    for (const auto& c : h.comments)
        if (const auto p = c.find("depth_scale="); p != std::string::npos)
            scale = parse_double(std::string_view(c).substr(p + 12), "PGM depth_scale");
    const std::size_t bpp = maxval > 255 ? 2 : 1;
    const std::size_t need = width * height * bpp;
    if (bytes.size() - h.offset() < need)
        fail(ErrorKind::Format, "raster truncated: need " + std::to_string(need) + " bytes from byte offset " +
                                    std::to_string(h.offset()) + ", file has " + std::to_string(bytes.size()));
    DepthImage img(width, height);
    const unsigned char* p = bytes.data() + h.offset();
    for (std::size_t i = 0; i < width * height; ++i) {
        const unsigned v = bpp == 2 ? (unsigned{p[2 * i]} << 8) | p[2 * i + 1] : p[i];
        img.data[i] = static_cast<double>(v) * scale;
    }
    return img;
}

inline DepthImage parse_pfm(const std::vector<unsigned char>& bytes)
{
    detail::HeaderReader h(bytes);
    const std::string magic = h.token();
    if (magic == "PF")
        fail(ErrorKind::Format, "colour PFM ('PF') is not a depth image at byte offset 0");
    if (magic != "Pf")
        fail(ErrorKind::Format, "not a PFM (expected 'Pf') at byte offset 0");
    const std::size_t width = h.number();
    const std::size_t height = h.number();
    if (width == 0 || height == 0)
        h.error("zero image dimension");
    const std::size_t scale_at = h.offset();
    const std::string scale_text = h.token();
    double scale = 0.0;
    try {
        scale = parse_double(scale_text, "PFM scale");
    } catch (const Error&) {
        fail(ErrorKind::Format, "bad PFM scale '" + scale_text + "' at byte offset " + std::to_string(scale_at));
    }
    if (scale == 0.0)
        fail(ErrorKind::Format, "PFM scale must be nonzero at byte offset " + std::to_string(scale_at));
    h.end_of_header();
    const bool little = scale < 0.0;
    const std::size_t need = width * height * 4;
    if (bytes.size() - h.offset() < need)
        fail(ErrorKind::Format, "raster truncated: need " + std::to_string(need) + " bytes from byte offset " +
                                    std::to_string(h.offset()) + ", file has " + std::to_string(bytes.size()));
    DepthImage img(width, height);
    const unsigned char* p = bytes.data() + h.offset();
    for (std::size_t r = 0; r < height; ++r)
        for (std::size_t c = 0; c < width; ++c) {
            const unsigned char* q = p + 4 * ((height - 1 - r) * width + c);
            std::uint32_t u = little ? (std::uint32_t{q[0]} | std::uint32_t{q[1]} << 8 | std::uint32_t{q[2]} << 16 | std::uint32_t{q[3]} << 24)
                                     : (std::uint32_t{q[3]} | std::uint32_t{q[2]} << 8 | std::uint32_t{q[1]} << 16 | std::uint32_t{q[0]} << 24);
            img.at(r, c) = static_cast<double>(std::bit_cast<float>(u));
        }
    return img;
}

/// Dispatches on the magic bytes.
inline DepthImage read_depth(const std::string& path)
{
    const auto bytes = detail::read_all(path);
    if (bytes.size() < 2)
        fail(ErrorKind::Format, "'" + path + "' is too short to be an image (byte offset 0)");
    if (bytes[0] == 'P' && bytes[1] == '5')
        return parse_pgm(bytes);
    if (bytes[0] == 'P' && (bytes[1] == 'f' || bytes[1] == 'F'))
        return parse_pfm(bytes);
    fail(ErrorKind::Format, "'" + path + "': unrecognised magic at byte offset 0");
}

inline std::string encode_pfm(const DepthImage& img)
{
    std::string out = "Pf\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n-1.0\n";
    out.reserve(out.size() + img.data.size() * 4);
    for (std::size_t r = img.height; r-- > 0;)
        for (std::size_t c = 0; c < img.width; ++c) {
            const auto u = std::bit_cast<std::uint32_t>(static_cast<float>(img.at(r, c)));
            for (int b = 0; b < 4; ++b)
                out.push_back(static_cast<char>((u >> (8 * b)) & 0xFF));
        }
    return out;
}

inline void write_pfm(const std::string& path, const DepthImage& img)
{
    detail::write_all(path, encode_pfm(img));
}

/// 16-bit PGM in millimeters (values rounded and clamped to [0, 65535]).
inline std::string encode_pgm16(const DepthImage& img)
{
    std::string out = "P5\n# depth_scale=0.001\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n65535\n";
    for (double v : img.data) {
        const auto mm = static_cast<std::uint16_t>(std::clamp(std::round(v * 1000.0), 0.0, 65535.0));
        out.push_back(static_cast<char>(mm >> 8));
        out.push_back(static_cast<char>(mm & 0xFF));
    }
    return out;
}

inline void write_pgm16(const std::string& path, const DepthImage& img)
{
    detail::write_all(path, encode_pgm16(img));
}

/// Overrides pipeline settings from `key = value` pairs. Probability and
/// distribution keys use the domain-randomization table names.
inline void apply_config(PipelineConfig& cfg, const KeyValueConfig& kv)
{
    cfg.clip_min = kv.get_double("clip_min", cfg.clip_min);
    cfg.clip_max = kv.get_double("clip_max", cfg.clip_max);
    cfg.contour_grad_threshold = kv.get_double("contour_grad_threshold", cfg.contour_grad_threshold);
    cfg.contour_drop_prob = kv.get_double("contour_artifact", cfg.contour_drop_prob);
    cfg.crop_left = kv.get_size("crop_left", cfg.crop_left);
    cfg.crop_right = kv.get_size("crop_right", cfg.crop_right);
    cfg.crop_bottom = kv.get_size("crop_bottom", cfg.crop_bottom);
    cfg.crop_top = kv.get_size("crop_top", cfg.crop_top);
    cfg.artifact_prob = kv.get_double("depth_artifact", cfg.artifact_prob);
    cfg.artifact_size_mean = kv.get_double("depth_artifact_size_mu", cfg.artifact_size_mean);
    cfg.artifact_size_sigma = kv.get_double("depth_artifact_size_sigma", cfg.artifact_size_sigma);
    cfg.blur_kernel = kv.get_size("blur_kernel", cfg.blur_kernel);
    cfg.blur_sigma_min = kv.get_double("gaussian_blur_sigma_l", cfg.blur_sigma_min);
    cfg.blur_sigma_max = kv.get_double("gaussian_blur_sigma_h", cfg.blur_sigma_max);
    if (kv.has("blur_sigma"))
        cfg.blur_sigma = kv.get_double("blur_sigma", 1.0);
    cfg.target_width = kv.get_size("target_width", cfg.target_width);
    cfg.target_height = kv.get_size("target_height", cfg.target_height);
    const auto mode = kv.get_string("mode", cfg.mode == PipelineMode::Train ? "train" : "deploy");
    require(mode == "train" || mode == "deploy", ErrorKind::InvalidArgument, "mode must be 'train' or 'deploy'");
    cfg.mode = mode == "train" ? PipelineMode::Train : PipelineMode::Deploy;
}

} // namespace smoe
