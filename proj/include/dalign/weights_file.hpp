#pragma once

#include "dalign/localization.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace dalign {

// JSON document:
//   {"format": "dalign-sac-weights", "version": 1,
//    "cbam": {"reduce": CONV, "merge": CONV},
//    "classifier": {"blocks": [CONV, CONV, CONV], "head": CONV}}
// CONV = {"out": n, "in": n, "kh": k, "kw": k, "weights": [...], "bias": [...]}
// with weights ordered (out, in, kh, kw).

std::string format_weights(const SacWeights& weights);

/// Throws FormatError (byte offset for JSON syntax errors, 0 for schema errors).
SacWeights parse_weights(std::string_view text);

SacWeights read_weights_file(const std::filesystem::path& path);
void write_weights_file(const std::filesystem::path& path, const SacWeights& weights);

struct WeightsShape {
    std::size_t channels = 0;
    std::size_t reduced = 4;
    std::size_t hidden = 16;
    std::size_t classes = 5;
};

/// Gaussian weights with He-style scaling and zero bias, from `seed`.
SacWeights random_sac_weights(const WeightsShape& shape, std::uint64_t seed);

} // namespace dalign
