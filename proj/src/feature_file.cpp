#include "dalign/feature_file.hpp"

#include "dalign/errors.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

namespace dalign {

namespace {

constexpr std::array<char, 4> kMagic{'D', 'A', 'F', '1'};

template <typename U>
void put_le(std::vector<std::byte>& out, U value)
{
    for (std::size_t k = 0; k < sizeof(U); ++k) {
        out.push_back(static_cast<std::byte>((value >> (8 * k)) & 0xFFu));
    }
}

template <typename U>
U get_le(std::span<const std::byte> bytes, std::size_t offset)
{
    U value = 0;
    for (std::size_t k = 0; k < sizeof(U); ++k) {
        value |= static_cast<U>(std::to_integer<unsigned>(bytes[offset + k])) << (8 * k);
    }
    return value;
}

std::vector<std::byte> slurp(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError(fmt::format("cannot open {}", path.string()));
    }
    std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::vector<std::byte> bytes(raw.size());
    std::memcpy(bytes.data(), raw.data(), raw.size());
    return bytes;
}

} // namespace

std::vector<std::byte> encode_feature_file(const DescriptorField& field, Dtype dtype)
{
    if (dtype != Dtype::f64 && dtype != Dtype::f32) {
        throw DomainError("unknown feature dtype");
    }
    std::vector<std::byte> out;
    const std::size_t count = field.values().size();
    out.reserve(kFeatureHeaderSize + count * (dtype == Dtype::f64 ? 8 : 4));
    for (char c : kMagic) {
        out.push_back(static_cast<std::byte>(c));
    }
    put_le<std::uint16_t>(out, kFeatureFileVersion);
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(dtype));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(field.channels()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(field.height()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(field.width()));
    for (double v : field.values()) {
        if (dtype == Dtype::f64) {
            put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
        } else {
            put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
        }
    }
    return out;
}

FeatureFileHeader decode_feature_header(std::span<const std::byte> bytes)
{
    for (std::size_t k = 0; k < kMagic.size(); ++k) {
        if (k >= bytes.size() || static_cast<char>(bytes[k]) != kMagic[k]) {
            throw FormatError("bad magic: expected \"DAF1\"", 0);
        }
    }
    if (bytes.size() < kFeatureHeaderSize) {
        throw FormatError(fmt::format("truncated header: {} of {} bytes", bytes.size(),
                                      kFeatureHeaderSize),
                          bytes.size());
    }
    FeatureFileHeader header;
    header.version = get_le<std::uint16_t>(bytes, 4);
    if (header.version != kFeatureFileVersion) {
        throw FormatError(fmt::format("unsupported version {}", header.version), 4);
    }
    const auto dtype = get_le<std::uint16_t>(bytes, 6);
    if (dtype > 1) {
        throw FormatError(fmt::format("unknown dtype code {}", dtype), 6);
    }
    header.dtype = static_cast<Dtype>(dtype);
    header.channels = get_le<std::uint32_t>(bytes, 8);
    header.height = get_le<std::uint32_t>(bytes, 12);
    header.width = get_le<std::uint32_t>(bytes, 16);
    const std::array<std::pair<std::uint32_t, const char*>, 3> dims{
        {{header.channels, "d"}, {header.height, "h"}, {header.width, "w"}}};
    for (std::size_t k = 0; k < dims.size(); ++k) {
        if (dims[k].first == 0) {
            throw FormatError(fmt::format("zero dimension {}", dims[k].second), 8 + 4 * k);
        }
    }
    return header;
}

DescriptorField decode_feature_file(std::span<const std::byte> bytes)
{
    const FeatureFileHeader header = decode_feature_header(bytes);
    const std::size_t count = header.value_count();
    const std::size_t size = header.value_size();
    const std::size_t payload = bytes.size() - kFeatureHeaderSize;
    if (payload < count * size) {
        throw FormatError(fmt::format("truncated payload: expected {} values ({} bytes), found {} "
                                      "bytes",
                                      count, count * size, payload),
                          bytes.size());
    }
    if (payload > count * size) {
        throw FormatError(fmt::format("{} trailing bytes after {} values", payload - count * size,
                                      count),
                          kFeatureHeaderSize + count * size);
    }
    std::vector<double> values(count);
    for (std::size_t k = 0; k < count; ++k) {
        const std::size_t at = kFeatureHeaderSize + k * size;
        values[k] = header.dtype == Dtype::f64
                        ? std::bit_cast<double>(get_le<std::uint64_t>(bytes, at))
                        : static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(bytes, at)));
    }
    return {header.channels, header.height, header.width, std::move(values)};
}

DescriptorField read_feature_file(const std::filesystem::path& path)
{
    const auto bytes = slurp(path);
    try {
        return decode_feature_file(bytes);
    } catch (const FormatError& e) {
        throw FormatError(fmt::format("{}: {} (byte offset {})", path.string(), e.what(),
                                      e.offset()),
                          e.offset());
    }
}

FeatureFileHeader read_feature_header(const std::filesystem::path& path)
{
    const auto bytes = slurp(path);
    try {
        return decode_feature_header(bytes);
    } catch (const FormatError& e) {
        throw FormatError(fmt::format("{}: {} (byte offset {})", path.string(), e.what(),
                                      e.offset()),
                          e.offset());
    }
}

void write_feature_file(const std::filesystem::path& path, const DescriptorField& field, Dtype dtype)
{
    const auto bytes = encode_feature_file(field, dtype);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError(fmt::format("cannot open {} for writing", path.string()));
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError(fmt::format("write to {} failed", path.string()));
    }
}

} // namespace dalign
