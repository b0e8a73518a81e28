#pragma once

#include "dalign/descriptor.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace dalign {

// DAF1 layout, little-endian throughout:
//   offset  0  char[4]  magic "DAF1"
//   offset  4  u16      version (1)
//   offset  6  u16      dtype (0 = f64, 1 = f32)
//   offset  8  u32      d
//   offset 12  u32      h
//   offset 16  u32      w
//   offset 20  payload  d·h·w values, channel-major, no trailing bytes

enum class Dtype : std::uint16_t {
    f64 = 0,
    f32 = 1,
};

inline constexpr std::uint16_t kFeatureFileVersion = 1;
inline constexpr std::size_t kFeatureHeaderSize = 20;

struct FeatureFileHeader {
    std::uint16_t version = kFeatureFileVersion;
    Dtype dtype = Dtype::f64;
    std::uint32_t channels = 0;
    std::uint32_t height = 0;
    std::uint32_t width = 0;

    std::size_t value_count() const noexcept
    {
        return std::size_t{channels} * height * width;
    }
    std::size_t value_size() const noexcept { return dtype == Dtype::f64 ? 8 : 4; }
};

std::vector<std::byte> encode_feature_file(const DescriptorField& field, Dtype dtype = Dtype::f64);

/// Validates the header only. Throws FormatError carrying the byte offset.
FeatureFileHeader decode_feature_header(std::span<const std::byte> bytes);

/// Validates the whole image; f32 payloads are widened to double.
DescriptorField decode_feature_file(std::span<const std::byte> bytes);

DescriptorField read_feature_file(const std::filesystem::path& path);
FeatureFileHeader read_feature_header(const std::filesystem::path& path);
void write_feature_file(const std::filesystem::path& path, const DescriptorField& field,
                        Dtype dtype = Dtype::f64);

} // namespace dalign
