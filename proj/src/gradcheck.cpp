#include "dalign/gradcheck.hpp"

#include "dalign/alignment.hpp"
#include "dalign/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace dalign {

namespace {

using Descriptors = std::vector<std::vector<double>>;

struct Instance {
    std::vector<SupportPool> pools;
    std::vector<Descriptors> queries;
    std::vector<std::size_t> labels;
};

Descriptors gaussian_descriptors(std::size_t count, std::size_t dim, std::mt19937_64& rng)
{
    std::normal_distribution<double> normal(0.0, 1.0);
    Descriptors out(count, std::vector<double>(dim));
    for (auto& v : out) {
        for (double& x : v) {
            x = normal(rng);
        }
    }
    return out;
}

Instance draw_instance(const GradCheckConfig& config, std::mt19937_64& rng)
{
    std::uniform_int_distribution<std::size_t> dim_dist(2, std::max<std::size_t>(2, config.max_dim));
    std::uniform_int_distribution<std::size_t> cell_dist(1, std::max<std::size_t>(1, config.max_cells));
    const std::size_t dim = dim_dist(rng);
    const std::size_t cells = cell_dist(rng);

    Instance inst;
    for (std::size_t k = 0; k < config.ways; ++k) {
        inst.pools.push_back(
            SupportPool::from_descriptors(k, gaussian_descriptors(config.shots * cells, dim, rng)));
    }
    for (std::size_t k = 0; k < config.ways; ++k) {
        inst.queries.push_back(gaussian_descriptors(cells, dim, rng));
        inst.labels.push_back(k);
    }
    return inst;
}

std::vector<LabeledQuery> labeled(const Instance& inst)
{
    std::vector<LabeledQuery> out;
    for (std::size_t n = 0; n < inst.queries.size(); ++n) {
        out.push_back({QueryRepresentation::from_descriptors(inst.queries[n]), inst.labels[n]});
    }
    return out;
}

/// Smallest gap between the best and second-best cosine over every query
/// descriptor and pool.
double nearest_tie_gap(const Instance& inst)
{
    double gap = std::numeric_limits<double>::infinity();
    for (const auto& descriptors : inst.queries) {
        for (const auto& d : descriptors) {
            for (const auto& pool : inst.pools) {
                double best = -2.0, second = -2.0;
                for (std::size_t j = 0; j < pool.size(); ++j) {
                    const double cos = cosine_similarity(d, pool.descriptor(j));
                    if (cos > best) {
                        second = best;
                        best = cos;
                    } else if (cos > second) {
                        second = cos;
                    }
                }
                if (pool.size() > 1) {
                    gap = std::min(gap, best - second);
                }
            }
        }
    }
    return gap;
}

} // namespace

GradCheckResult run_gradient_check(const GradCheckConfig& config)
{
    if (config.instances == 0 || !(config.step > 0.0) || config.ways < 2 || config.shots < 1) {
        throw DomainError("gradient check needs instances >= 1, step > 0, ways >= 2, shots >= 1");
    }
    GradCheckResult result;
    std::mt19937_64 rng(config.seed);
    while (result.instances < config.instances) {
        Instance inst = draw_instance(config, rng);
        if (nearest_tie_gap(inst) < config.tie_margin) {
            ++result.redrawn_ties;
            continue;
        }
        const auto analytic = loss_gradient_wrt_query(labeled(inst), inst.pools);
        for (std::size_t n = 0; n < inst.queries.size(); ++n) {
            const std::size_t dim = inst.queries[n].front().size();
            for (std::size_t i = 0; i < inst.queries[n].size(); ++i) {
                for (std::size_t c = 0; c < dim; ++c) {
                    const double saved = inst.queries[n][i][c];
                    inst.queries[n][i][c] = saved + config.step;
                    const double up = episode_loss(labeled(inst), inst.pools);
                    inst.queries[n][i][c] = saved - config.step;
                    const double down = episode_loss(labeled(inst), inst.pools);
                    inst.queries[n][i][c] = saved;

                    const double numeric = (up - down) / (2.0 * config.step);
                    const double a = analytic[n][i * dim + c];
                    const double abs_err = std::abs(a - numeric);
                    const double scale =
                        std::max({std::abs(a), std::abs(numeric), config.relative_floor});
                    result.max_absolute_error = std::max(result.max_absolute_error, abs_err);
                    result.max_relative_error = std::max(result.max_relative_error, abs_err / scale);
                    ++result.components;
                }
            }
        }
        ++result.instances;
    }
    return result;
}

} // namespace dalign
