#include "dalign/weights_file.hpp"

#include "dalign/errors.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

namespace dalign {

namespace {

using nlohmann::json;

constexpr const char* kFormatTag = "dalign-sac-weights";

json conv_to_json(const ConvWeights& w)
{
    return {{"out", w.out_channels}, {"in", w.in_channels}, {"kh", w.kernel_h},
            {"kw", w.kernel_w},      {"weights", w.weights}, {"bias", w.bias}};
}

ConvWeights conv_from_json(const json& j)
{
    return {j.at("out").get<std::size_t>(),          j.at("in").get<std::size_t>(),
            j.at("kh").get<std::size_t>(),           j.at("kw").get<std::size_t>(),
            j.at("weights").get<std::vector<double>>(), j.at("bias").get<std::vector<double>>()};
}

ConvWeights random_conv(std::size_t out, std::size_t in, std::size_t k, std::mt19937_64& rng)
{
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(in * k * k)));
    ConvWeights w = ConvWeights::zeros(out, in, k, k);
    for (double& v : w.weights) {
        v = normal(rng);
    }
    return w;
}

} // namespace

std::string format_weights(const SacWeights& weights)
{
    json blocks = json::array();
    for (const auto& b : weights.classifier.blocks) {
        blocks.push_back(conv_to_json(b));
    }
    const json doc = {
        {"format", kFormatTag},
        {"version", 1},
        {"cbam", {{"reduce", conv_to_json(weights.cbam.reduce)}, {"merge", conv_to_json(weights.cbam.merge)}}},
        {"classifier", {{"blocks", blocks}, {"head", conv_to_json(weights.classifier.head)}}},
    };
    return doc.dump(1) + "\n";
}

SacWeights parse_weights(std::string_view text)
{
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError(fmt::format("weights JSON: {}", e.what()), e.byte);
    }
    try {
        if (doc.at("format").get<std::string>() != kFormatTag || doc.at("version").get<int>() != 1) {
            throw FormatError("weights file has an unknown format tag or version", 0);
        }
        SacWeights w;
        w.cbam.reduce = conv_from_json(doc.at("cbam").at("reduce"));
        w.cbam.merge = conv_from_json(doc.at("cbam").at("merge"));
        const auto& blocks = doc.at("classifier").at("blocks");
        if (!blocks.is_array() || blocks.size() != 3) {
            throw FormatError("classifier needs exactly three blocks", 0);
        }
        for (std::size_t k = 0; k < 3; ++k) {
            w.classifier.blocks[k] = conv_from_json(blocks[k]);
        }
        w.classifier.head = conv_from_json(doc.at("classifier").at("head"));
        w.cbam.validate(w.cbam.reduce.in_channels);
        w.classifier.validate(w.classifier.blocks[0].in_channels);
        return w;
    } catch (const json::exception& e) {
        throw FormatError(fmt::format("weights schema: {}", e.what()), 0);
    } catch (const ShapeError& e) {
        throw FormatError(fmt::format("weights shapes: {}", e.what()), 0);
    }
}

SacWeights read_weights_file(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw IoError(fmt::format("cannot open weights file {}", path.string()));
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_weights(buffer.str());
}

void write_weights_file(const std::filesystem::path& path, const SacWeights& weights)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError(fmt::format("cannot open {} for writing", path.string()));
    }
    out << format_weights(weights);
    if (!out) {
        throw IoError(fmt::format("write to {} failed", path.string()));
    }
}

SacWeights random_sac_weights(const WeightsShape& shape, std::uint64_t seed)
{
    if (shape.channels == 0 || shape.reduced == 0 || shape.hidden == 0 || shape.classes == 0) {
        throw DomainError("weight shapes must be positive");
    }
    std::mt19937_64 rng(seed);
    SacWeights w;
    w.cbam.reduce = random_conv(shape.reduced, shape.channels, 1, rng);
    w.cbam.merge = random_conv(1, shape.reduced + 2, 1, rng);
    std::size_t in = shape.channels;
    for (auto& block : w.classifier.blocks) {
        block = random_conv(shape.hidden, in, 3, rng);
        in = shape.hidden;
    }
    w.classifier.head = random_conv(shape.classes, shape.hidden, 1, rng);
    return w;
}

} // namespace dalign
