#pragma once

// Depth-image degradation pipeline bridging rendered depth to sensor depth.
//
//   1 clip         [0.15, 3.0] m
//   2 contour drop pixels on a depth discontinuity (> 1.0) go to max range w.p. 0.1   (train only)
//   3 crop         20 left, 5 right, 16 bottom, 0 top: 160x120 -> 135x104
//   4 artifacts    per-pixel p=0.001 max-range rectangles, sides ~ N(3, 3)          (train only)
//   5 blur         3x3 Gaussian, sigma ~ U(0.1, 2.0), reflect-101 borders
//   6 resize       bilinear to 87x58
//   7 normalize    (d - 0.15) / 2.85 - 0.5, giving [-0.5, 0.5]

#include <smoe/error.hpp>
#include <smoe/rng.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace smoe {

enum class DepthStage { Raw, Clipped, ContourDropped, Cropped, Artifacted, Blurred, Resized, Normalized };

inline const char* to_string(DepthStage s) noexcept
{
    switch (s) {
    case DepthStage::Raw: return "raw";
    case DepthStage::Clipped: return "clipped";
    case DepthStage::ContourDropped: return "contour";
    case DepthStage::Cropped: return "cropped";
    case DepthStage::Artifacted: return "artifacts";
    case DepthStage::Blurred: return "blurred";
    case DepthStage::Resized: return "resized";
    case DepthStage::Normalized: return "normalized";
    }
    return "?";
}

enum class PipelineMode { Train, Deploy };

struct DepthImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<double> data; // row-major, row 0 at the top, meters
    DepthStage stage = DepthStage::Raw;

    DepthImage() = default;
    DepthImage(std::size_t w, std::size_t h, double fill = 0.0, DepthStage s = DepthStage::Raw)
        : width(w), height(h), data(w * h, fill), stage(s)
    {
    }

    double& at(std::size_t row, std::size_t col) noexcept { return data[row * width + col]; }
    double at(std::size_t row, std::size_t col) const noexcept { return data[row * width + col]; }

    double min() const { return *std::min_element(data.begin(), data.end()); }
    double max() const { return *std::max_element(data.begin(), data.end()); }
};

struct PipelineConfig {
    std::size_t input_width = 160;
    std::size_t input_height = 120;
    double clip_min = 0.15;
    double clip_max = 3.0;
    double contour_grad_threshold = 1.0;
    double contour_drop_prob = 0.1;
    std::size_t crop_left = 20;
    std::size_t crop_right = 5;
    std::size_t crop_bottom = 16;
    std::size_t crop_top = 0;
    double artifact_prob = 0.001;
    double artifact_size_mean = 3.0;
    double artifact_size_sigma = 3.0;
    std::size_t blur_kernel = 3;
    double blur_sigma_min = 0.1;
    double blur_sigma_max = 2.0;
    std::optional<double> blur_sigma; // pins sigma instead of sampling it
    std::size_t target_width = 87;
    std::size_t target_height = 58;
    PipelineMode mode = PipelineMode::Train;
};

DepthImage clip(DepthImage img, const PipelineConfig& cfg);
DepthImage contour_drop(DepthImage img, const PipelineConfig& cfg, Rng& rng);
DepthImage crop(const DepthImage& img, const PipelineConfig& cfg);
DepthImage add_artifacts(DepthImage img, const PipelineConfig& cfg, Rng& rng, std::size_t* count = nullptr);
std::vector<double> gaussian_kernel(std::size_t size, double sigma);
DepthImage blur(const DepthImage& img, const PipelineConfig& cfg, Rng& rng, double* sigma_used = nullptr);
DepthImage blur_with_sigma(const DepthImage& img, std::size_t kernel, double sigma);
DepthImage resize(const DepthImage& img, const PipelineConfig& cfg);
DepthImage normalize(DepthImage img, const PipelineConfig& cfg);
DepthImage run_pipeline(const DepthImage& img, const PipelineConfig& cfg, Rng& rng, std::vector<DepthImage>* stages = nullptr);

inline DepthImage clip(DepthImage img, const PipelineConfig& cfg)
{
    for (double& v : img.data)
        v = std::clamp(v, cfg.clip_min, cfg.clip_max);
    img.stage = DepthStage::Clipped;
    return img;
}

/// Forward differences; a pixel is a contour pixel when
/// max(|d(r,c+1) - d(r,c)|, |d(r+1,c) - d(r,c)|) exceeds the threshold.
inline std::vector<bool> contour_mask(const DepthImage& img, double threshold)
{
    std::vector<bool> mask(img.data.size(), false);
    for (std::size_t r = 0; r < img.height; ++r)
        for (std::size_t c = 0; c < img.width; ++c) {
            const double d = img.at(r, c);
            const double dx = c + 1 < img.width ? std::abs(img.at(r, c + 1) - d) : 0.0;
            const double dy = r + 1 < img.height ? std::abs(img.at(r + 1, c) - d) : 0.0;
            mask[r * img.width + c] = std::max(dx, dy) > threshold;
        }
    return mask;
}

inline DepthImage contour_drop(DepthImage img, const PipelineConfig& cfg, Rng& rng)
{
    const auto mask = contour_mask(img, cfg.contour_grad_threshold);
    if (cfg.contour_drop_prob > 0.0)
        for (std::size_t i = 0; i < mask.size(); ++i)
            if (mask[i] && rng.bernoulli(cfg.contour_drop_prob))
                img.data[i] = cfg.clip_max;
    img.stage = DepthStage::ContourDropped;
    return img;
}

inline DepthImage crop(const DepthImage& img, const PipelineConfig& cfg)
{
    require(cfg.crop_left + cfg.crop_right < img.width && cfg.crop_top + cfg.crop_bottom < img.height, ErrorKind::Dimension,
            "crop: margins exceed a " + std::to_string(img.width) + "x" + std::to_string(img.height) + " image");
    DepthImage out(img.width - cfg.crop_left - cfg.crop_right, img.height - cfg.crop_top - cfg.crop_bottom, 0.0,
                   DepthStage::Cropped);
    for (std::size_t r = 0; r < out.height; ++r)
        for (std::size_t c = 0; c < out.width; ++c)
            out.at(r, c) = img.at(r + cfg.crop_top, c + cfg.crop_left);
    return out;
}

inline DepthImage add_artifacts(DepthImage img, const PipelineConfig& cfg, Rng& rng, std::size_t* count)
{
    std::size_t painted = 0;
    if (cfg.artifact_prob > 0.0) {
        // Centers are drawn on the incoming image so rectangles do not seed further rectangles.
        const std::size_t w = img.width, h = img.height;
        std::vector<std::array<std::size_t, 4>> rects;
        for (std::size_t r = 0; r < h; ++r)
            for (std::size_t c = 0; c < w; ++c) {
                if (!rng.bernoulli(cfg.artifact_prob))
                    continue;
                const auto side = [&] {
                    const double s = std::round(rng.normal(cfg.artifact_size_mean, cfg.artifact_size_sigma));
                    return static_cast<std::size_t>(std::max(1.0, s));
                };
                const std::size_t aw = std::min(side(), w), ah = std::min(side(), h);
                const std::size_t c0 = c >= aw / 2 ? c - aw / 2 : 0, r0 = r >= ah / 2 ? r - ah / 2 : 0;
                rects.push_back({r0, std::min(h, r0 + ah), c0, std::min(w, c0 + aw)});
            }
        for (const auto& [r0, r1, c0, c1] : rects)
            for (std::size_t r = r0; r < r1; ++r)
                for (std::size_t c = c0; c < c1; ++c)
                    img.at(r, c) = cfg.clip_max;
        painted = rects.size();
    }
    if (count)
        *count = painted;
    img.stage = DepthStage::Artifacted;
    return img;
}

inline std::vector<double> gaussian_kernel(std::size_t size, double sigma)
{
    require(size % 2 == 1, ErrorKind::InvalidArgument, "blur kernel size must be odd");
    require(sigma > 0.0, ErrorKind::InvalidArgument, "blur sigma must be positive");
    std::vector<double> k(size);
    const double half = static_cast<double>(size / 2);
    double sum = 0.0;
    for (std::size_t i = 0; i < size; ++i) {
        const double d = static_cast<double>(i) - half;
        k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
        sum += k[i];
    }
    for (double& v : k)
        v /= sum;
    return k;
}

namespace detail {

/// Reflect-101 index (…2 1 | 0 1 2 … n-1 | n-2 …); clamps for n == 1.
inline std::size_t reflect101(std::ptrdiff_t i, std::size_t n) noexcept
{
    if (n == 1)
        return 0;
    const auto m = static_cast<std::ptrdiff_t>(n);
    while (i < 0 || i >= m)
        i = i < 0 ? -i : 2 * (m - 1) - i;
    return static_cast<std::size_t>(i);
}

} // namespace detail

inline DepthImage blur_with_sigma(const DepthImage& img, std::size_t kernel, double sigma)
{
    const auto k = gaussian_kernel(kernel, sigma);
    const auto half = static_cast<std::ptrdiff_t>(kernel / 2);
    DepthImage tmp(img.width, img.height, 0.0, DepthStage::Blurred), out(img.width, img.height, 0.0, DepthStage::Blurred);
    const double lo = img.min(), hi = img.max();
    for (std::size_t r = 0; r < img.height; ++r)
        for (std::size_t c = 0; c < img.width; ++c) {
            double acc = 0.0;
            for (std::ptrdiff_t j = -half; j <= half; ++j)
                acc += k[static_cast<std::size_t>(j + half)] *
                       img.at(r, detail::reflect101(static_cast<std::ptrdiff_t>(c) + j, img.width));
            tmp.at(r, c) = acc;
        }
    for (std::size_t r = 0; r < img.height; ++r)
        for (std::size_t c = 0; c < img.width; ++c) {
            double acc = 0.0;
            for (std::ptrdiff_t j = -half; j <= half; ++j)
                acc += k[static_cast<std::size_t>(j + half)] *
                       tmp.at(detail::reflect101(static_cast<std::ptrdiff_t>(r) + j, img.height), c);
            out.at(r, c) = std::clamp(acc, lo, hi);
        }
    return out;
}

inline DepthImage blur(const DepthImage& img, const PipelineConfig& cfg, Rng& rng, double* sigma_used)
{
    const double sigma = cfg.blur_sigma ? *cfg.blur_sigma : rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max);
    if (sigma_used)
        *sigma_used = sigma;
    return blur_with_sigma(img, cfg.blur_kernel, sigma);
}

/// Bilinear downsampling with half-pixel centers; every output is a convex
/// combination of input pixels.
inline DepthImage resize(const DepthImage& img, const PipelineConfig& cfg)
{
    require(cfg.target_width > 0 && cfg.target_height > 0, ErrorKind::InvalidArgument, "resize: empty target");
    require(cfg.target_width <= img.width && cfg.target_height <= img.height, ErrorKind::InvalidArgument,
            "resize: upscaling " + std::to_string(img.width) + "x" + std::to_string(img.height) + " to " +
                std::to_string(cfg.target_width) + "x" + std::to_string(cfg.target_height) + " is not supported");
    DepthImage out(cfg.target_width, cfg.target_height, 0.0, DepthStage::Resized);
    const double sx = static_cast<double>(img.width) / static_cast<double>(out.width);
    const double sy = static_cast<double>(img.height) / static_cast<double>(out.height);
    const double lo = img.min(), hi = img.max();
    auto sample = [](double pos, std::size_t n, std::size_t& i0, std::size_t& i1, double& f) {
        pos = std::clamp(pos, 0.0, static_cast<double>(n - 1));
        i0 = static_cast<std::size_t>(std::floor(pos));
        i1 = std::min(i0 + 1, n - 1);
        f = pos - static_cast<double>(i0);
    };
    for (std::size_t r = 0; r < out.height; ++r) {
        std::size_t r0, r1;
        double fy;
        sample((static_cast<double>(r) + 0.5) * sy - 0.5, img.height, r0, r1, fy);
        for (std::size_t c = 0; c < out.width; ++c) {
            std::size_t c0, c1;
            double fx;
            sample((static_cast<double>(c) + 0.5) * sx - 0.5, img.width, c0, c1, fx);
            const double top = (1.0 - fx) * img.at(r0, c0) + fx * img.at(r0, c1);
            const double bottom = (1.0 - fx) * img.at(r1, c0) + fx * img.at(r1, c1);
            out.at(r, c) = std::clamp((1.0 - fy) * top + fy * bottom, lo, hi);
        }
    }
    return out;
}

inline DepthImage normalize(DepthImage img, const PipelineConfig& cfg)
{
    constexpr double slack = 1e-9;
    const double range = cfg.clip_max - cfg.clip_min;
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        const double d = img.data[i];
        require(d >= cfg.clip_min - slack && d <= cfg.clip_max + slack, ErrorKind::InvalidArgument,
                "normalize: pixel " + std::to_string(i) + " = " + std::to_string(d) + " m lies outside the clip range");
        img.data[i] = std::clamp((d - cfg.clip_min) / range - 0.5, -0.5, 0.5);
    }
    img.stage = DepthStage::Normalized;
    return img;
}

inline DepthImage run_pipeline(const DepthImage& img, const PipelineConfig& cfg, Rng& rng, std::vector<DepthImage>* stages)
{
    require(img.width == cfg.input_width && img.height == cfg.input_height, ErrorKind::Dimension,
            "pipeline expects " + std::to_string(cfg.input_width) + "x" + std::to_string(cfg.input_height) + " input, got " +
                std::to_string(img.width) + "x" + std::to_string(img.height));
    const bool train = cfg.mode == PipelineMode::Train;
    auto keep = [&](const DepthImage& s) {
        if (stages)
            stages->push_back(s);
    };
    DepthImage cur = clip(img, cfg);
    keep(cur);
    if (train) {
        cur = contour_drop(std::move(cur), cfg, rng);
        keep(cur);
    }
    cur = crop(cur, cfg);
    keep(cur);
    if (train) {
        cur = add_artifacts(std::move(cur), cfg, rng);
        keep(cur);
    }
    cur = blur(cur, cfg, rng);
    keep(cur);
    cur = resize(cur, cfg);
    keep(cur);
    cur = normalize(std::move(cur), cfg);
    keep(cur);
    return cur;
}

} // namespace smoe
