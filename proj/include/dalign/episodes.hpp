#pragma once

#include "dalign/alignment.hpp"
#include "dalign/descriptor.hpp"
#include "dalign/errors.hpp"
#include "dalign/feature_file.hpp"
#include "dalign/localization.hpp"
#include "dalign/manifest.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace dalign {

/// A manifest with every feature file loaded; read-only once built.
struct Dataset {
    DatasetManifest manifest;
    std::vector<DescriptorField> fields;

    const DescriptorField& field(std::size_t record) const { return fields.at(record); }
};

Dataset load_dataset(DatasetManifest manifest);

/// Writes each field to its manifest path and the manifest itself as
/// `<dir>/manifest.txt`. Returns the manifest path.
std::filesystem::path write_dataset(const Dataset& dataset, const std::filesystem::path& dir,
                                    Dtype dtype = Dtype::f64);

/// Query count used when none is given: 15 per class for 1-shot, 10 otherwise.
std::size_t default_queries_per_class(std::size_t shots);

struct EpisodeSpec {
    std::size_t ways = 5;
    std::size_t shots = 1;
    std::size_t queries_per_class = 15;
    std::uint64_t seed = 0;

    /// Throws DomainError on an invalid spec and CapacityError when the
    /// dataset cannot supply it.
    void validate(const DatasetManifest& manifest) const;
};

struct EpisodeQuery {
    std::size_t record;
    /// Way index in [0, ways).
    std::size_t label;
};

struct Episode {
    /// Dataset class index of each way.
    std::vector<std::size_t> classes;
    /// Record indices, `shots` per way.
    std::vector<std::vector<std::size_t>> support;
    /// Way-major: all queries of way 0, then way 1, ...
    std::vector<EpisodeQuery> queries;
};

/// Classes uniformly without replacement, then shots + queries distinct
/// records per class, split support/query in sampled order.
Episode sample_episode(const DatasetManifest& manifest, const EpisodeSpec& spec,
                       std::mt19937_64& rng);

/// Seed of episode `index`: splitmix64(root + (index + 1) · 0x9E3779B97F4A7C15).
/// Episodes are independent, so evaluation order does not affect results.
std::uint64_t episode_seed(std::uint64_t root, std::uint64_t index);

/// Predicts a way index for every query of the episode, in query order.
using EpisodePipeline =
    std::function<std::vector<std::size_t>(const Dataset&, const Episode&, std::uint64_t seed)>;

struct PipelineConfig {
    /// Select descriptors through the complementary attention path. Requires weights.
    bool use_sac = false;
    std::optional<SacWeights> weights;
    double select_threshold = kDefaultSelectThreshold;
    double erase_threshold = kDefaultEraseThreshold;
    NnBackend backend = NnBackend::blocked;
};

/// Optional attention-based selection followed by alignment classification.
EpisodePipeline make_alignment_pipeline(PipelineConfig config);

struct ConfidenceInterval {
    double mean = 0.0;
    double halfwidth = 0.0;
};

/// Normal approximation: halfwidth = 1.96 · s / √n, s with n − 1 denominator.
ConfidenceInterval confidence_interval(std::span<const double> accuracies);

struct EvalReport {
    std::size_t n_episodes = 0;
    std::vector<double> accuracies;
    double mean = 0.0;
    double ci95 = 0.0;
    std::optional<WsolMetrics> wsol;
    double wall_seconds = 0.0;
};

/// Raised when a pipeline fails; carries the failing episode index.
class EpisodeError : public Error {
public:
    EpisodeError(const std::string& what, std::size_t episode) : Error(what), episode_(episode) {}
    std::size_t episode() const noexcept { return episode_; }

private:
    std::size_t episode_;
};

/// Runs `n_episodes` episodes on `threads` workers (0 = hardware concurrency).
/// Results are identical for any thread count. With a single episode the
/// halfwidth is reported as 0.
EvalReport evaluate(const Dataset& dataset, const EpisodeSpec& spec, std::size_t n_episodes,
                    const EpisodePipeline& pipeline, std::size_t threads = 0);

struct SyntheticSpec {
    std::size_t classes = 5;
    std::size_t records_per_class = 20;
    std::size_t dim = 32;
    std::size_t height = 4;
    std::size_t width = 4;
    /// Distance between class means, in units of the noise standard deviation.
    double separation = 4.0;
    /// Cells carrying the class signal; the rest is pure noise. 0 = whole grid.
    std::size_t object_height = 0;
    std::size_t object_width = 0;
};

/// Class k's descriptors are μ_k + N(0, I) inside an object box (whole grid by
/// default) and N(0, I) elsewhere. The means are mutually orthogonal with
/// ‖μ_a − μ_b‖ = separation; requires dim >= classes. Every record carries its
/// object box in grid coordinates.
Dataset synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed);

} // namespace dalign
