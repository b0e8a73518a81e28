#include "dalign/episodes.hpp"

#include <cmath>

#include <fmt/format.h>

namespace dalign {

namespace {

/// `count` mutually orthonormal directions in R^dim (Gram-Schmidt on Gaussians).
std::vector<std::vector<double>> orthonormal_directions(std::size_t count, std::size_t dim,
                                                        std::mt19937_64& rng)
{
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<std::vector<double>> basis;
    while (basis.size() < count) {
        std::vector<double> v(dim);
        for (double& x : v) {
            x = normal(rng);
        }
        for (const auto& b : basis) {
            double dot = 0.0;
            for (std::size_t c = 0; c < dim; ++c) {
                dot += v[c] * b[c];
            }
            for (std::size_t c = 0; c < dim; ++c) {
                v[c] -= dot * b[c];
            }
        }
        double norm = 0.0;
        for (double x : v) {
            norm += x * x;
        }
        norm = std::sqrt(norm);
        if (norm < 1e-8) {
            continue;
        }
        for (double& x : v) {
            x /= norm;
        }
        basis.push_back(std::move(v));
    }
    return basis;
}

} // namespace

Dataset synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed)
{
    if (spec.classes < 2) {
        throw DomainError("synthetic data needs at least two classes");
    }
    if (spec.records_per_class < 1 || spec.dim < 1 || spec.height < 1 || spec.width < 1) {
        throw DomainError("synthetic data needs positive record count and field dimensions");
    }
    if (spec.dim < spec.classes) {
        throw DomainError(fmt::format("orthogonal class means need dim >= classes ({} < {})",
                                      spec.dim, spec.classes));
    }
    if (!(spec.separation >= 0.0) || !std::isfinite(spec.separation)) {
        throw DomainError("class separation must be finite and non-negative");
    }
    const std::size_t obj_h = spec.object_height == 0 ? spec.height : spec.object_height;
    const std::size_t obj_w = spec.object_width == 0 ? spec.width : spec.object_width;
    if (obj_h > spec.height || obj_w > spec.width) {
        throw DomainError("object box larger than the grid");
    }

    std::mt19937_64 rng(seed);
    // Orthonormal means scaled by s/√2 sit exactly s apart pairwise.
    auto means = orthonormal_directions(spec.classes, spec.dim, rng);
    const double scale = spec.separation / std::sqrt(2.0);
    for (auto& mean : means) {
        for (double& x : mean) {
            x *= scale;
        }
    }

    Dataset dataset;
    dataset.manifest.root = ".";
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t k = 0; k < spec.classes; ++k) {
        const std::string name = fmt::format("class{:03}", k);
        const std::size_t class_index = dataset.manifest.add_class(name);
        for (std::size_t r = 0; r < spec.records_per_class; ++r) {
            std::mt19937_64 record_rng(episode_seed(seed, k * spec.records_per_class + r));
            std::uniform_int_distribution<std::size_t> top(0, spec.height - obj_h);
            std::uniform_int_distribution<std::size_t> left(0, spec.width - obj_w);
            const std::size_t y0 = top(record_rng);
            const std::size_t x0 = left(record_rng);

            DescriptorField field(spec.dim, spec.height, spec.width);
            for (std::size_t c = 0; c < spec.dim; ++c) {
                for (std::size_t i = 0; i < spec.height; ++i) {
                    for (std::size_t j = 0; j < spec.width; ++j) {
                        const bool inside = i >= y0 && i < y0 + obj_h && j >= x0 && j < x0 + obj_w;
                        field.at(c, i, j) = normal(record_rng) + (inside ? means[k][c] : 0.0);
                    }
                }
            }
            ManifestRecord record;
            record.class_index = class_index;
            record.feature_path = fmt::format("features/{}/{:05}.daf", name, r);
            record.bbox = BBox(static_cast<long>(x0), static_cast<long>(y0),
                               static_cast<long>(x0 + obj_w), static_cast<long>(y0 + obj_h));
            dataset.manifest.add_record(std::move(record));
            dataset.fields.push_back(std::move(field));
        }
    }
    return dataset;
}

} // namespace dalign
