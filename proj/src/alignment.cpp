#include "dalign/alignment.hpp"

#include "dalign/errors.hpp"
#include "dalign/localization.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

namespace dalign {

namespace {

double sum_squares(std::span<const double> v)
{
    double acc = 0.0;
    for (double x : v) {
        acc += x * x;
    }
    return acc;
}

void require_dims(const QueryRepresentation& query, const SupportPool& pool)
{
    if (pool.empty()) {
        throw DomainError(fmt::format("support pool of class {} has no descriptors",
                                      pool.class_id()));
    }
    if (query.dim() != pool.dim()) {
        throw ShapeError(fmt::format("query descriptors have dimension {}, pool has {}",
                                     query.dim(), pool.dim()));
    }
}

std::size_t pool_position(std::span<const SupportPool> pools, std::size_t label)
{
    for (std::size_t k = 0; k < pools.size(); ++k) {
        if (pools[k].class_id() == label) {
            return k;
        }
    }
    throw DomainError(fmt::format("label {} does not name any support pool", label));
}

AlignmentMatch match_reference(const QueryRepresentation& query, const SupportPool& pool)
{
    AlignmentMatch out;
    out.nn_indices.resize(query.size());
    out.nn_cosines.resize(query.size());
    std::vector<double> candidate(pool.dim());
    for (std::size_t i = 0; i < query.size(); ++i) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_j = 0;
        for (std::size_t j = 0; j < pool.size(); ++j) {
            for (std::size_t c = 0; c < pool.dim(); ++c) {
                candidate[c] = pool.value(c, j);
            }
            const double cos = cosine_similarity(query.descriptor(i), candidate);
            if (cos > best) {
                best = cos;
                best_j = j;
            }
        }
        out.nn_indices[i] = best_j;
        out.nn_cosines[i] = best;
    }
    for (double cos : out.nn_cosines) {
        out.distance += cos;
    }
    return out;
}

constexpr std::size_t kQueryTile = 4;
constexpr std::size_t kPoolTile = 64;

AlignmentMatch match_blocked(const QueryRepresentation& query, const SupportPool& pool)
{
    const std::size_t n = query.size();
    const std::size_t l = pool.size();
    const std::size_t d = pool.dim();

    AlignmentMatch out;
    out.nn_indices.assign(n, 0);
    out.nn_cosines.assign(n, -std::numeric_limits<double>::infinity());

    double dots[kQueryTile][kPoolTile];
    for (std::size_t i0 = 0; i0 < n; i0 += kQueryTile) {
        const std::size_t ni = std::min(kQueryTile, n - i0);
        for (std::size_t j0 = 0; j0 < l; j0 += kPoolTile) {
            const std::size_t nj = std::min(kPoolTile, l - j0);
            for (std::size_t a = 0; a < ni; ++a) {
                std::fill_n(dots[a], nj, 0.0);
            }
            // Each dot product accumulates over channels in ascending order,
            // matching cosine_similarity term for term.
            for (std::size_t c = 0; c < d; ++c) {
                const double* column = pool.channel(c).data() + j0;
                for (std::size_t a = 0; a < ni; ++a) {
                    const double q = query.descriptor(i0 + a)[c];
                    double* row = dots[a];
                    for (std::size_t b = 0; b < nj; ++b) {
                        row[b] += q * column[b];
                    }
                }
            }
            for (std::size_t a = 0; a < ni; ++a) {
                const double qn = query.norm(i0 + a);
                double best = out.nn_cosines[i0 + a];
                std::size_t best_j = out.nn_indices[i0 + a];
                for (std::size_t b = 0; b < nj; ++b) {
                    const double cos = dots[a][b] / (qn * pool.norm(j0 + b));
                    if (cos > best) {
                        best = cos;
                        best_j = j0 + b;
                    }
                }
                out.nn_cosines[i0 + a] = best;
                out.nn_indices[i0 + a] = best_j;
            }
        }
    }
    for (double cos : out.nn_cosines) {
        out.distance += cos;
    }
    return out;
}

} // namespace

SupportPool::SupportPool(std::size_t class_id, std::size_t dim) : class_id_(class_id), dim_(dim)
{
    if (dim == 0) {
        throw ShapeError("descriptor dimension must be positive");
    }
}

void SupportPool::append(std::span<const double> descriptor)
{
    // Re-pack channel-major storage with one extra column.
    const std::size_t l = size();
    std::vector<double> grown(dim_ * (l + 1));
    for (std::size_t c = 0; c < dim_; ++c) {
        std::copy_n(values_.begin() + static_cast<std::ptrdiff_t>(c * l), l,
                    grown.begin() + static_cast<std::ptrdiff_t>(c * (l + 1)));
        grown[c * (l + 1) + l] = descriptor[c];
    }
    values_ = std::move(grown);
    norms_.push_back(std::sqrt(sum_squares(descriptor)));
}

SupportPool SupportPool::from_fields(std::size_t class_id, std::span<const DescriptorField> fields)
{
    if (fields.empty()) {
        throw DomainError("support pool needs at least one field");
    }
    const std::size_t d = fields.front().channels();
    std::vector<std::vector<double>> kept;
    for (const auto& field : fields) {
        if (field.channels() != d) {
            throw ShapeError("support fields disagree on channel count");
        }
        for (std::size_t r = 0; r < field.height(); ++r) {
            for (std::size_t c = 0; c < field.width(); ++c) {
                auto v = descriptor_at(field, r, c);
                if (sum_squares(v) > 0.0) {
                    kept.push_back(std::move(v));
                }
            }
        }
    }
    SupportPool pool(class_id, d);
    const std::size_t l = kept.size();
    pool.values_.resize(d * l);
    pool.norms_.resize(l);
    for (std::size_t j = 0; j < l; ++j) {
        for (std::size_t c = 0; c < d; ++c) {
            pool.values_[c * l + j] = kept[j][c];
        }
        pool.norms_[j] = std::sqrt(sum_squares(kept[j]));
    }
    return pool;
}

SupportPool SupportPool::from_descriptors(std::size_t class_id,
                                          const std::vector<std::vector<double>>& descriptors)
{
    if (descriptors.empty()) {
        throw DomainError("support pool needs at least one descriptor");
    }
    SupportPool pool(class_id, descriptors.front().size());
    for (const auto& v : descriptors) {
        if (v.size() != pool.dim_) {
            throw ShapeError("support descriptors disagree on dimension");
        }
        if (sum_squares(v) == 0.0) {
            throw DomainError("support descriptors must be nonzero");
        }
        pool.append(v);
    }
    return pool;
}

std::vector<double> SupportPool::descriptor(std::size_t index) const
{
    if (index >= size()) {
        throw BoundsError(fmt::format("pool index {} outside {} entries", index, size()));
    }
    std::vector<double> out(dim_);
    for (std::size_t c = 0; c < dim_; ++c) {
        out[c] = value(c, index);
    }
    return out;
}

SupportPool SupportPool::permuted(std::span<const std::size_t> order) const
{
    if (order.size() != size()) {
        throw ShapeError("permutation length differs from pool size");
    }
    SupportPool out(class_id_, dim_);
    const std::size_t l = size();
    out.values_.resize(values_.size());
    out.norms_.resize(l);
    for (std::size_t k = 0; k < l; ++k) {
        if (order[k] >= l) {
            throw BoundsError("permutation entry outside pool");
        }
        for (std::size_t c = 0; c < dim_; ++c) {
            out.values_[c * l + k] = values_[c * l + order[k]];
        }
        out.norms_[k] = norms_[order[k]];
    }
    return out;
}

void QueryRepresentation::append(std::span<const double> descriptor,
                                 std::pair<std::size_t, std::size_t> coord)
{
    values_.insert(values_.end(), descriptor.begin(), descriptor.end());
    norms_.push_back(std::sqrt(sum_squares(descriptor)));
    coords_.push_back(coord);
}

QueryRepresentation QueryRepresentation::from_field(const DescriptorField& field)
{
    QueryRepresentation out;
    out.dim_ = field.channels();
    for (std::size_t r = 0; r < field.height(); ++r) {
        for (std::size_t c = 0; c < field.width(); ++c) {
            const auto v = descriptor_at(field, r, c);
            if (sum_squares(v) > 0.0) {
                out.append(v, {r, c});
            }
        }
    }
    if (out.size() == 0) {
        throw EmptySelectionError("empty selection: every descriptor of the query is zero");
    }
    return out;
}

QueryRepresentation
QueryRepresentation::from_descriptors(const std::vector<std::vector<double>>& descriptors)
{
    if (descriptors.empty()) {
        throw EmptySelectionError("empty selection: query has no descriptors");
    }
    QueryRepresentation out;
    out.dim_ = descriptors.front().size();
    if (out.dim_ == 0) {
        throw ShapeError("descriptor dimension must be positive");
    }
    for (std::size_t k = 0; k < descriptors.size(); ++k) {
        if (descriptors[k].size() != out.dim_) {
            throw ShapeError("query descriptors disagree on dimension");
        }
        if (sum_squares(descriptors[k]) == 0.0) {
            throw DomainError("query descriptors must be nonzero");
        }
        out.append(descriptors[k], {0, k});
    }
    return out;
}

QueryRepresentation QueryRepresentation::scaled(double factor) const
{
    QueryRepresentation out;
    out.dim_ = dim_;
    out.coords_ = coords_;
    out.values_ = values_;
    for (double& v : out.values_) {
        v *= factor;
    }
    for (std::size_t i = 0; i < size(); ++i) {
        out.norms_.push_back(std::sqrt(sum_squares(out.descriptor(i))));
    }
    return out;
}

AlignmentMatch alignment_distance(const QueryRepresentation& query, const SupportPool& pool,
                                  NnBackend backend)
{
    require_dims(query, pool);
    return backend == NnBackend::reference ? match_reference(query, pool)
                                           : match_blocked(query, pool);
}

std::vector<double> class_probabilities(std::span<const double> distances)
{
    for (double v : distances) {
        if (!std::isfinite(v)) {
            throw DomainError("alignment distances must be finite");
        }
    }
    return softmax(distances);
}

AlignmentResult align(const QueryRepresentation& query, std::span<const SupportPool> pools,
                      NnBackend backend)
{
    if (pools.empty()) {
        throw DomainError("classification needs at least one support pool");
    }
    AlignmentResult out;
    for (const auto& pool : pools) {
        out.matches.push_back(alignment_distance(query, pool, backend));
        out.distances.push_back(out.matches.back().distance);
    }
    out.probabilities = class_probabilities(out.distances);
    return out;
}

std::size_t classify(const QueryRepresentation& query, std::span<const SupportPool> pools,
                     NnBackend backend)
{
    const AlignmentResult result = align(query, pools, backend);
    return pools[argmax(result.distances)].class_id();
}

double episode_loss(std::span<const LabeledQuery> queries, std::span<const SupportPool> pools,
                    NnBackend backend)
{
    if (queries.empty()) {
        throw DomainError("episode loss needs at least one query");
    }
    double loss = 0.0;
    for (const auto& item : queries) {
        const std::size_t k = pool_position(pools, item.label);
        const AlignmentResult result = align(item.query, pools, backend);
        loss += cross_entropy(result.distances, k);
    }
    return loss;
}

std::vector<std::vector<double>> loss_gradient_wrt_query(std::span<const LabeledQuery> queries,
                                                         std::span<const SupportPool> pools,
                                                         NnBackend backend)
{
    if (queries.empty()) {
        throw DomainError("episode loss needs at least one query");
    }
    std::vector<std::vector<double>> grads;
    grads.reserve(queries.size());
    for (const auto& item : queries) {
        const std::size_t label = pool_position(pools, item.label);
        const AlignmentResult result = align(item.query, pools, backend);
        const QueryRepresentation& q = item.query;
        const std::size_t d = q.dim();

        std::vector<double> grad(q.size() * d, 0.0);
        for (std::size_t k = 0; k < pools.size(); ++k) {
            // ∂(−log p_label)/∂D_k = p_k − [k == label]
            const double weight = result.probabilities[k] - (k == label ? 1.0 : 0.0);
            const auto& match = result.matches[k];
            for (std::size_t i = 0; i < q.size(); ++i) {
                const double qn = q.norm(i);
                if (qn == 0.0) {
                    throw DomainError("gradient undefined at a zero descriptor");
                }
                const std::size_t j = match.nn_indices[i];
                const double sn = pools[k].norm(j);
                const double cos = match.nn_cosines[i];
                const auto di = q.descriptor(i);
                for (std::size_t c = 0; c < d; ++c) {
                    const double dcos = pools[k].value(c, j) / (qn * sn) - cos * di[c] / (qn * qn);
                    grad[i * d + c] += weight * dcos;
                }
            }
        }
        grads.push_back(std::move(grad));
    }
    return grads;
}

ActivationMask selection_mask(const Cam& cam, double threshold, std::size_t height,
                              std::size_t width)
{
    if (!(threshold > 0.0 && threshold <= 1.0)) {
        throw DomainError(fmt::format("selection threshold must lie in (0,1], got {}", threshold));
    }
    const Cam resized = (cam.height() == height && cam.width() == width)
                            ? cam
                            : nearest_resize(cam, height, width);
    std::vector<double> keep(resized.cells());
    for (std::size_t k = 0; k < keep.size(); ++k) {
        const double v = resized.values()[k];
        if (v < 0.0 || v > 1.0) {
            throw DomainError("selection expects a cam normalized to [0,1]");
        }
        keep[k] = v >= threshold ? 1.0 : 0.0;
    }
    return {height, width, std::move(keep)};
}

QueryRepresentation select_and_build(const DescriptorField& field, const Cam& fused_cam,
                                     double select_threshold)
{
    const ActivationMask mask =
        selection_mask(fused_cam, select_threshold, field.height(), field.width());
    return QueryRepresentation::from_field(apply_selection_mask(field, mask));
}

} // namespace dalign
