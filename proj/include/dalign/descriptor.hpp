#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace dalign {

/// A d×h×w activation tensor, stored channel-major (channel, row, col).
/// Viewed spatially it holds m = h·w deep descriptors, each a d-vector.
class DescriptorField {
public:
    DescriptorField(std::size_t channels, std::size_t height, std::size_t width);
    DescriptorField(std::size_t channels, std::size_t height, std::size_t width,
                    std::vector<double> values);

    std::size_t channels() const noexcept { return channels_; }
    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t cells() const noexcept { return height_ * width_; }

    double at(std::size_t channel, std::size_t row, std::size_t col) const
    {
        return values_[(channel * height_ + row) * width_ + col];
    }
    double& at(std::size_t channel, std::size_t row, std::size_t col)
    {
        return values_[(channel * height_ + row) * width_ + col];
    }

    /// Contiguous h×w plane of one channel.
    std::span<const double> plane(std::size_t channel) const
    {
        return {values_.data() + channel * cells(), cells()};
    }

    std::span<const double> values() const noexcept { return values_; }
    std::span<double> values() noexcept { return values_; }

    bool operator==(const DescriptorField&) const = default;

private:
    std::size_t channels_;
    std::size_t height_;
    std::size_t width_;
    std::vector<double> values_;
};

/// Row-major h×w real map shared by masks and activation maps.
class Map2d {
public:
    Map2d(std::size_t height, std::size_t width, double fill = 0.0);
    Map2d(std::size_t height, std::size_t width, std::vector<double> values);

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t cells() const noexcept { return height_ * width_; }

    double at(std::size_t row, std::size_t col) const { return values_[row * width_ + col]; }
    std::span<const double> values() const noexcept { return values_; }

    bool operator==(const Map2d&) const = default;

protected:
    std::size_t height_;
    std::size_t width_;
    std::vector<double> values_;
};

/// Spatial map with every value in [0,1].
class ActivationMask : public Map2d {
public:
    ActivationMask(std::size_t height, std::size_t width, double fill = 1.0);
    ActivationMask(std::size_t height, std::size_t width, std::vector<double> values);

    /// True when every value is exactly 0 or 1.
    bool is_binary() const noexcept { return binary_; }

    /// Pointwise AND of two binary masks.
    friend ActivationMask operator&(const ActivationMask& a, const ActivationMask& b);

private:
    bool binary_ = true;
};

/// Class activation map. Values are finite but otherwise unbounded until
/// normalized.
class Cam : public Map2d {
public:
    Cam(std::size_t height, std::size_t width, double fill = 0.0);
    Cam(std::size_t height, std::size_t width, std::vector<double> values);

    /// Min-max normalization into [0,1]; a constant map normalizes to zeros.
    Cam normalized() const;
    double max() const;
};

/// Convolution kernel bank with shape (out, in, kh, kw) and per-output bias.
struct ConvWeights {
    std::size_t out_channels = 0;
    std::size_t in_channels = 0;
    std::size_t kernel_h = 0;
    std::size_t kernel_w = 0;
    std::vector<double> weights;
    std::vector<double> bias;

    ConvWeights() = default;
    ConvWeights(std::size_t out, std::size_t in, std::size_t kh, std::size_t kw,
                std::vector<double> weights, std::vector<double> bias);

    /// Zero-initialized weights and bias.
    static ConvWeights zeros(std::size_t out, std::size_t in, std::size_t kh, std::size_t kw);

    double weight(std::size_t o, std::size_t i, std::size_t y, std::size_t x) const
    {
        return weights[((o * in_channels + i) * kernel_h + y) * kernel_w + x];
    }
    double& weight(std::size_t o, std::size_t i, std::size_t y, std::size_t x)
    {
        return weights[((o * in_channels + i) * kernel_h + y) * kernel_w + x];
    }

    /// Throws ShapeError unless the invariants hold.
    void validate() const;

    bool operator==(const ConvWeights&) const = default;
};

/// Copy of the d-vector at (row, col). Throws BoundsError when outside the grid.
std::vector<double> descriptor_at(const DescriptorField& field, std::size_t row, std::size_t col);

/// aᵀb / (‖a‖‖b‖); exactly 0 when either norm is 0.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Cross-correlation with zero padding and bias. Output size is
/// h + 2·padding − kh + 1 by w + 2·padding − kw + 1.
DescriptorField conv2d_forward(const DescriptorField& input, const ConvWeights& weights,
                               std::size_t padding);

/// Zeroes every descriptor whose mask cell is 0. Requires a binary mask.
DescriptorField apply_selection_mask(const DescriptorField& field, const ActivationMask& mask);

/// result(c,i,j) = field(c,i,j) · mask(i,j).
DescriptorField spatial_multiply(const DescriptorField& field, const ActivationMask& mask);

/// Floor-based nearest-neighbour resize:
/// out(i,j) = in(floor(i·h/target_h), floor(j·w/target_w)).
ActivationMask nearest_resize(const ActivationMask& map, std::size_t target_h, std::size_t target_w);
Cam nearest_resize(const Cam& map, std::size_t target_h, std::size_t target_w);

/// Stacks fields along the channel axis. All inputs must share (h, w).
DescriptorField concat_channels(std::span<const DescriptorField> parts);

} // namespace dalign
