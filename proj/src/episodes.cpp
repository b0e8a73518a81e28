#include "dalign/episodes.hpp"

#include "dalign/feature_file.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <thread>

#include <fmt/format.h>

namespace dalign {

namespace {

/// First `count` entries of a uniformly shuffled copy of [0, n).
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count,
                                                    std::mt19937_64& rng)
{
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t k = 0; k < count; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, n - 1);
        std::swap(pool[k], pool[pick(rng)]);
    }
    pool.resize(count);
    return pool;
}

std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Fused-map selection of one field, or the field unchanged without attention.
DescriptorField select_field(const DescriptorField& field, const PipelineConfig& config)
{
    if (!config.use_sac) {
        return field;
    }
    const SacResult sac = sac_forward(field, *config.weights, config.erase_threshold);
    return apply_selection_mask(
        field, selection_mask(sac.fused, config.select_threshold, field.height(), field.width()));
}

} // namespace

Dataset load_dataset(DatasetManifest manifest)
{
    Dataset dataset{std::move(manifest), {}};
    dataset.fields.reserve(dataset.manifest.records.size());
    for (const auto& record : dataset.manifest.records) {
        dataset.fields.push_back(read_feature_file(dataset.manifest.resolve(record)));
    }
    return dataset;
}

std::filesystem::path write_dataset(const Dataset& dataset, const std::filesystem::path& dir,
                                    Dtype dtype)
{
    std::filesystem::create_directories(dir);
    for (std::size_t k = 0; k < dataset.manifest.records.size(); ++k) {
        const auto path = dir / dataset.manifest.records[k].feature_path;
        std::filesystem::create_directories(path.parent_path());
        write_feature_file(path, dataset.fields.at(k), dtype);
    }
    const auto manifest_path = dir / "manifest.txt";
    std::ofstream out(manifest_path, std::ios::trunc);
    if (!out) {
        throw IoError(fmt::format("cannot open {} for writing", manifest_path.string()));
    }
    out << format_manifest(dataset.manifest);
    return manifest_path;
}

std::size_t default_queries_per_class(std::size_t shots)
{
    return shots == 1 ? 15 : 10;
}

void EpisodeSpec::validate(const DatasetManifest& manifest) const
{
    if (ways < 2 || shots < 1 || queries_per_class < 1) {
        throw DomainError(fmt::format("episode needs ways >= 2, shots >= 1, queries >= 1 (got "
                                      "{}, {}, {})",
                                      ways, shots, queries_per_class));
    }
    const std::size_t needed = shots + queries_per_class;
    std::string short_class;
    for (std::size_t c = 0; c < manifest.classes.size() && short_class.empty(); ++c) {
        if (manifest.class_records[c].size() < needed) {
            short_class = manifest.classes[c];
        }
    }
    if (manifest.classes.size() < ways) {
        throw CapacityError(fmt::format("{}-way episodes need {} classes, dataset has {}", ways,
                                        ways, manifest.classes.size()));
    }
    if (!short_class.empty()) {
        throw CapacityError(fmt::format("class '{}' has fewer than the {} records an episode "
                                        "draws per class",
                                        short_class, needed));
    }
}

Episode sample_episode(const DatasetManifest& manifest, const EpisodeSpec& spec,
                       std::mt19937_64& rng)
{
    spec.validate(manifest);
    Episode episode;
    episode.classes = sample_without_replacement(manifest.classes.size(), spec.ways, rng);
    episode.support.resize(spec.ways);
    std::vector<std::vector<std::size_t>> query_records(spec.ways);
    for (std::size_t way = 0; way < spec.ways; ++way) {
        const auto& records = manifest.class_records[episode.classes[way]];
        const auto picks =
            sample_without_replacement(records.size(), spec.shots + spec.queries_per_class, rng);
        for (std::size_t k = 0; k < picks.size(); ++k) {
            (k < spec.shots ? episode.support[way] : query_records[way]).push_back(records[picks[k]]);
        }
    }
    for (std::size_t way = 0; way < spec.ways; ++way) {
        for (std::size_t record : query_records[way]) {
            episode.queries.push_back({record, way});
        }
    }
    return episode;
}

std::uint64_t episode_seed(std::uint64_t root, std::uint64_t index)
{
    return splitmix64(root + (index + 1) * 0x9E3779B97F4A7C15ULL);
}

EpisodePipeline make_alignment_pipeline(PipelineConfig config)
{
    if (config.use_sac && !config.weights) {
        throw DomainError("attention-based selection needs SAC weights");
    }
    return [config = std::move(config)](const Dataset& dataset, const Episode& episode,
                                        std::uint64_t) {
        std::vector<SupportPool> pools;
        pools.reserve(episode.support.size());
        for (std::size_t way = 0; way < episode.support.size(); ++way) {
            std::vector<DescriptorField> fields;
            for (std::size_t record : episode.support[way]) {
                fields.push_back(select_field(dataset.field(record), config));
            }
            pools.push_back(SupportPool::from_fields(way, fields));
        }
        std::vector<std::size_t> predictions;
        predictions.reserve(episode.queries.size());
        for (const auto& query : episode.queries) {
            const auto rep =
                QueryRepresentation::from_field(select_field(dataset.field(query.record), config));
            predictions.push_back(classify(rep, pools, config.backend));
        }
        return predictions;
    };
}

ConfidenceInterval confidence_interval(std::span<const double> accuracies)
{
    const std::size_t n = accuracies.size();
    if (n < 2) {
        throw DomainError("a confidence interval needs at least two values");
    }
    // Shifted-data variance: exact zero for a constant list.
    const double shift = accuracies.front();
    double sum = 0.0;
    double sum_sq = 0.0;
    for (double a : accuracies) {
        sum += a - shift;
        sum_sq += (a - shift) * (a - shift);
    }
    const auto count = static_cast<double>(n);
    const double mean = shift + sum / count;
    const double variance = std::max(0.0, (sum_sq - sum * sum / count) / (count - 1.0));
    const double sd = std::sqrt(variance);
    return {mean, 1.96 * sd / std::sqrt(static_cast<double>(n))};
}

EvalReport evaluate(const Dataset& dataset, const EpisodeSpec& spec, std::size_t n_episodes,
                    const EpisodePipeline& pipeline, std::size_t threads)
{
    if (n_episodes < 1) {
        throw DomainError("evaluation needs at least one episode");
    }
    spec.validate(dataset.manifest);
    if (threads == 0) {
        threads = std::max(1u, std::thread::hardware_concurrency());
    }
    threads = std::min(threads, n_episodes);

    const auto start = std::chrono::steady_clock::now();
    std::vector<double> accuracies(n_episodes, 0.0);
    std::atomic<std::size_t> next{0};
    std::mutex failure_mutex;
    std::size_t failed_episode = n_episodes;
    std::exception_ptr failure;

    const auto worker = [&] {
        for (std::size_t e = next++; e < n_episodes; e = next++) {
            try {
                const std::uint64_t seed = episode_seed(spec.seed, e);
                std::mt19937_64 rng(seed);
                const Episode episode = sample_episode(dataset.manifest, spec, rng);
                const auto predictions = pipeline(dataset, episode, seed);
                if (predictions.size() != episode.queries.size()) {
                    throw DomainError("pipeline returned the wrong number of predictions");
                }
                std::size_t correct = 0;
                for (std::size_t q = 0; q < predictions.size(); ++q) {
                    correct += predictions[q] == episode.queries[q].label;
                }
                accuracies[e] =
                    static_cast<double>(correct) / static_cast<double>(predictions.size());
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (e < failed_episode) {
                    failed_episode = e;
                    failure = std::current_exception();
                }
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        for (std::size_t t = 1; t < threads; ++t) {
            pool.emplace_back(worker);
        }
        worker();
    }
    if (failure) {
        try {
            std::rethrow_exception(failure);
        } catch (const std::exception& e) {
            throw EpisodeError(fmt::format("episode {}: {}", failed_episode, e.what()),
                               failed_episode);
        }
    }

    EvalReport report;
    report.n_episodes = n_episodes;
    report.accuracies = std::move(accuracies);
    if (n_episodes >= 2) {
        const auto ci = confidence_interval(report.accuracies);
        report.mean = ci.mean;
        report.ci95 = ci.halfwidth;
    } else {
        report.mean = report.accuracies.front();
    }
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

} // namespace dalign
