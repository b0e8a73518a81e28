#include "dalign/descriptor.hpp"

#include "dalign/errors.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace dalign {

namespace {

void require_positive_dims(std::size_t a, std::size_t b, std::size_t c)
{
    if (a == 0 || b == 0 || c == 0) {
        throw ShapeError(fmt::format("tensor dimensions must be positive, got {}x{}x{}", a, b, c));
    }
}

void require_same_grid(const DescriptorField& field, const Map2d& mask)
{
    if (field.height() != mask.height() || field.width() != mask.width()) {
        throw ShapeError(fmt::format("mask is {}x{} but field grid is {}x{}", mask.height(),
                                     mask.width(), field.height(), field.width()));
    }
}

std::vector<double> resize_values(const Map2d& map, std::size_t target_h, std::size_t target_w)
{
    if (target_h == 0 || target_w == 0) {
        throw DomainError("resize target must be at least 1x1");
    }
    std::vector<double> out(target_h * target_w);
    for (std::size_t i = 0; i < target_h; ++i) {
        const std::size_t src_row = i * map.height() / target_h;
        for (std::size_t j = 0; j < target_w; ++j) {
            const std::size_t src_col = j * map.width() / target_w;
            out[i * target_w + j] = map.at(src_row, src_col);
        }
    }
    return out;
}

} // namespace

DescriptorField::DescriptorField(std::size_t channels, std::size_t height, std::size_t width)
    : DescriptorField(channels, height, width, std::vector<double>(channels * height * width, 0.0))
{
}

DescriptorField::DescriptorField(std::size_t channels, std::size_t height, std::size_t width,
                                 std::vector<double> values)
    : channels_(channels), height_(height), width_(width), values_(std::move(values))
{
    require_positive_dims(channels, height, width);
    if (values_.size() != channels * height * width) {
        throw ShapeError(fmt::format("field {}x{}x{} needs {} values, got {}", channels, height,
                                     width, channels * height * width, values_.size()));
    }
}

Map2d::Map2d(std::size_t height, std::size_t width, double fill)
    : Map2d(height, width, std::vector<double>(height * width, fill))
{
}

Map2d::Map2d(std::size_t height, std::size_t width, std::vector<double> values)
    : height_(height), width_(width), values_(std::move(values))
{
    require_positive_dims(1, height, width);
    if (values_.size() != height * width) {
        throw ShapeError(fmt::format("map {}x{} needs {} values, got {}", height, width,
                                     height * width, values_.size()));
    }
}

ActivationMask::ActivationMask(std::size_t height, std::size_t width, double fill)
    : ActivationMask(height, width, std::vector<double>(height * width, fill))
{
}

ActivationMask::ActivationMask(std::size_t height, std::size_t width, std::vector<double> values)
    : Map2d(height, width, std::move(values))
{
    for (double v : values_) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw DomainError(fmt::format("mask value {} outside [0,1]", v));
        }
        if (v != 0.0 && v != 1.0) {
            binary_ = false;
        }
    }
}

ActivationMask operator&(const ActivationMask& a, const ActivationMask& b)
{
    if (a.height() != b.height() || a.width() != b.width()) {
        throw ShapeError("mask AND requires equal shapes");
    }
    if (!a.is_binary() || !b.is_binary()) {
        throw DomainError("mask AND requires binary masks");
    }
    std::vector<double> out(a.cells());
    for (std::size_t k = 0; k < out.size(); ++k) {
        out[k] = (a.values()[k] == 1.0 && b.values()[k] == 1.0) ? 1.0 : 0.0;
    }
    return {a.height(), a.width(), std::move(out)};
}

Cam::Cam(std::size_t height, std::size_t width, double fill)
    : Cam(height, width, std::vector<double>(height * width, fill))
{
}

Cam::Cam(std::size_t height, std::size_t width, std::vector<double> values)
    : Map2d(height, width, std::move(values))
{
    for (double v : values_) {
        if (!std::isfinite(v)) {
            throw DomainError("class activation map contains a non-finite value");
        }
    }
}

double Cam::max() const
{
    return *std::max_element(values_.begin(), values_.end());
}

Cam Cam::normalized() const
{
    const auto [lo, hi] = std::minmax_element(values_.begin(), values_.end());
    const double low = *lo;
    const double range = *hi - low;
    std::vector<double> out(values_.size(), 0.0);
    if (range > 0.0) {
        for (std::size_t k = 0; k < out.size(); ++k) {
            out[k] = (values_[k] - low) / range;
        }
    }
    return {height_, width_, std::move(out)};
}

ConvWeights::ConvWeights(std::size_t out, std::size_t in, std::size_t kh, std::size_t kw,
                         std::vector<double> w, std::vector<double> b)
    : out_channels(out), in_channels(in), kernel_h(kh), kernel_w(kw), weights(std::move(w)),
      bias(std::move(b))
{
    validate();
}

ConvWeights ConvWeights::zeros(std::size_t out, std::size_t in, std::size_t kh, std::size_t kw)
{
    return {out, in, kh, kw, std::vector<double>(out * in * kh * kw, 0.0),
            std::vector<double>(out, 0.0)};
}

void ConvWeights::validate() const
{
    if (out_channels == 0 || in_channels == 0) {
        throw ShapeError("convolution channel counts must be positive");
    }
    const auto supported = [](std::size_t k) { return k == 1 || k == 3; };
    if (!supported(kernel_h) || !supported(kernel_w)) {
        throw ShapeError(fmt::format("unsupported kernel {}x{}; expected 1x1 or 3x3", kernel_h,
                                     kernel_w));
    }
    if (weights.size() != out_channels * in_channels * kernel_h * kernel_w) {
        throw ShapeError(fmt::format("kernel bank needs {} weights, got {}",
                                     out_channels * in_channels * kernel_h * kernel_w,
                                     weights.size()));
    }
    if (bias.size() != out_channels) {
        throw ShapeError(fmt::format("bias needs {} values, got {}", out_channels, bias.size()));
    }
}

std::vector<double> descriptor_at(const DescriptorField& field, std::size_t row, std::size_t col)
{
    if (row >= field.height() || col >= field.width()) {
        throw BoundsError(fmt::format("descriptor ({}, {}) outside {}x{} grid", row, col,
                                      field.height(), field.width()));
    }
    std::vector<double> out(field.channels());
    for (std::size_t c = 0; c < out.size(); ++c) {
        out[c] = field.at(c, row, col);
    }
    return out;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size() || a.empty()) {
        throw ShapeError(fmt::format("cosine of vectors with dimensions {} and {}", a.size(),
                                     b.size()));
    }
    double dot = 0.0;
    double aa = 0.0;
    double bb = 0.0;
    for (std::size_t c = 0; c < a.size(); ++c) {
        dot += a[c] * b[c];
        aa += a[c] * a[c];
        bb += b[c] * b[c];
    }
    if (aa == 0.0 || bb == 0.0) {
        return 0.0;
    }
    return dot / (std::sqrt(aa) * std::sqrt(bb));
}

DescriptorField conv2d_forward(const DescriptorField& input, const ConvWeights& weights,
                               std::size_t padding)
{
    weights.validate();
    if (weights.in_channels != input.channels()) {
        throw ShapeError(fmt::format("kernel expects {} input channels, field has {}",
                                     weights.in_channels, input.channels()));
    }
    const std::size_t padded_h = input.height() + 2 * padding;
    const std::size_t padded_w = input.width() + 2 * padding;
    if (padded_h < weights.kernel_h || padded_w < weights.kernel_w) {
        throw ShapeError("kernel larger than padded input");
    }
    const std::size_t out_h = padded_h - weights.kernel_h + 1;
    const std::size_t out_w = padded_w - weights.kernel_w + 1;

    DescriptorField out(weights.out_channels, out_h, out_w);
    const auto in_h = static_cast<std::ptrdiff_t>(input.height());
    const auto in_w = static_cast<std::ptrdiff_t>(input.width());
    const auto pad = static_cast<std::ptrdiff_t>(padding);

    for (std::size_t o = 0; o < weights.out_channels; ++o) {
        for (std::size_t i = 0; i < out_h; ++i) {
            for (std::size_t j = 0; j < out_w; ++j) {
                double acc = weights.bias[o];
                for (std::size_t c = 0; c < weights.in_channels; ++c) {
                    for (std::size_t y = 0; y < weights.kernel_h; ++y) {
                        const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(i + y) - pad;
                        if (r < 0 || r >= in_h) {
                            continue;
                        }
                        for (std::size_t x = 0; x < weights.kernel_w; ++x) {
                            const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(j + x) - pad;
                            if (s < 0 || s >= in_w) {
                                continue;
                            }
                            acc += weights.weight(o, c, y, x) *
                                   input.at(c, static_cast<std::size_t>(r),
                                            static_cast<std::size_t>(s));
                        }
                    }
                }
                out.at(o, i, j) = acc;
            }
        }
    }
    return out;
}

DescriptorField apply_selection_mask(const DescriptorField& field, const ActivationMask& mask)
{
    require_same_grid(field, mask);
    if (!mask.is_binary()) {
        throw DomainError("selection mask must be binary");
    }
    return spatial_multiply(field, mask);
}

DescriptorField spatial_multiply(const DescriptorField& field, const ActivationMask& mask)
{
    require_same_grid(field, mask);
    DescriptorField out = field;
    auto values = out.values();
    const auto weights = mask.values();
    for (std::size_t c = 0; c < field.channels(); ++c) {
        for (std::size_t k = 0; k < field.cells(); ++k) {
            values[c * field.cells() + k] *= weights[k];
        }
    }
    return out;
}

ActivationMask nearest_resize(const ActivationMask& map, std::size_t target_h, std::size_t target_w)
{
    return {target_h, target_w, resize_values(map, target_h, target_w)};
}

Cam nearest_resize(const Cam& map, std::size_t target_h, std::size_t target_w)
{
    return {target_h, target_w, resize_values(map, target_h, target_w)};
}

DescriptorField concat_channels(std::span<const DescriptorField> parts)
{
    if (parts.empty()) {
        throw ShapeError("cannot concatenate zero fields");
    }
    const std::size_t h = parts.front().height();
    const std::size_t w = parts.front().width();
    std::size_t channels = 0;
    std::vector<double> values;
    for (const auto& part : parts) {
        if (part.height() != h || part.width() != w) {
            throw ShapeError("concatenated fields must share a grid");
        }
        channels += part.channels();
        values.insert(values.end(), part.values().begin(), part.values().end());
    }
    return {channels, h, w, std::move(values)};
}

} // namespace dalign
