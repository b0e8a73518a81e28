#pragma once

#include "dalign/descriptor.hpp"

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace dalign {

/// Every nonzero descriptor of one class's support images, packed
/// channel-major (d × l) so a query descriptor can be scored against many
/// pool entries with unit-stride loads.
class SupportPool {
public:
    SupportPool(std::size_t class_id, std::size_t dim);

    /// Collects every nonzero descriptor of `fields` in (field, row, col) order.
    static SupportPool from_fields(std::size_t class_id, std::span<const DescriptorField> fields);

    /// Throws DomainError on a zero vector and ShapeError on a dimension mismatch.
    static SupportPool from_descriptors(std::size_t class_id,
                                        const std::vector<std::vector<double>>& descriptors);

    std::size_t class_id() const noexcept { return class_id_; }
    std::size_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return norms_.size(); }
    bool empty() const noexcept { return norms_.empty(); }

    double value(std::size_t channel, std::size_t index) const
    {
        return values_[channel * size() + index];
    }
    double norm(std::size_t index) const { return norms_[index]; }
    /// Channel `channel` of every pool entry, contiguous.
    std::span<const double> channel(std::size_t channel) const
    {
        return {values_.data() + channel * size(), size()};
    }
    std::vector<double> descriptor(std::size_t index) const;

    /// Returns a pool with entries reordered so that entry k is old entry order[k].
    SupportPool permuted(std::span<const std::size_t> order) const;

private:
    void append(std::span<const double> descriptor);

    std::size_t class_id_;
    std::size_t dim_;
    std::vector<double> values_;
    std::vector<double> norms_;
};

/// The selected (nonzero) descriptors of one image with their grid positions.
class QueryRepresentation {
public:
    /// All nonzero descriptors of `field` in row-major order. Throws
    /// EmptySelectionError when none remain.
    static QueryRepresentation from_field(const DescriptorField& field);

    /// Throws EmptySelectionError when empty, DomainError on a zero vector.
    static QueryRepresentation from_descriptors(const std::vector<std::vector<double>>& descriptors);

    std::size_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return norms_.size(); }

    std::span<const double> descriptor(std::size_t index) const
    {
        return {values_.data() + index * dim_, dim_};
    }
    double norm(std::size_t index) const { return norms_[index]; }
    std::pair<std::size_t, std::size_t> coordinate(std::size_t index) const
    {
        return coords_[index];
    }

    /// Copy with every descriptor multiplied by `factor`.
    QueryRepresentation scaled(double factor) const;

private:
    QueryRepresentation() = default;
    void append(std::span<const double> descriptor, std::pair<std::size_t, std::size_t> coord);

    std::size_t dim_ = 0;
    std::vector<double> values_;
    std::vector<double> norms_;
    std::vector<std::pair<std::size_t, std::size_t>> coords_;
};

struct LabeledQuery {
    QueryRepresentation query;
    /// Class id of the matching support pool.
    std::size_t label;
};

enum class NnBackend {
    /// One cosine_similarity call per (query, pool) pair.
    reference,
    /// Tiled dot products against the packed pool with precomputed norms.
    blocked,
};

struct AlignmentMatch {
    double distance = 0.0;
    /// Pool index of each query descriptor's nearest neighbour.
    std::vector<std::size_t> nn_indices;
    /// Cosine to that neighbour.
    std::vector<double> nn_cosines;
};

struct AlignmentResult {
    std::vector<double> distances;
    std::vector<AlignmentMatch> matches;
    std::vector<double> probabilities;
};

/// Σ_i max_j cos(q_i, s_j), summed in ascending i; ties go to the lowest pool
/// index. Both backends return identical bits.
AlignmentMatch alignment_distance(const QueryRepresentation& query, const SupportPool& pool,
                                  NnBackend backend = NnBackend::blocked);

/// Softmax over alignment distances.
std::vector<double> class_probabilities(std::span<const double> distances);

AlignmentResult align(const QueryRepresentation& query, std::span<const SupportPool> pools,
                      NnBackend backend = NnBackend::blocked);

/// class_id of the pool with the largest distance; ties go to the earliest pool.
std::size_t classify(const QueryRepresentation& query, std::span<const SupportPool> pools,
                     NnBackend backend = NnBackend::blocked);

/// Σ_n −log p(label_n | query_n), summed in query order.
double episode_loss(std::span<const LabeledQuery> queries, std::span<const SupportPool> pools,
                    NnBackend backend = NnBackend::blocked);

/// Analytic ∂L/∂descriptor for every query descriptor, with nearest-neighbour
/// assignments held fixed. Entry n is row-major (descriptors × d).
std::vector<std::vector<double>> loss_gradient_wrt_query(std::span<const LabeledQuery> queries,
                                                         std::span<const SupportPool> pools,
                                                         NnBackend backend = NnBackend::blocked);

inline constexpr double kDefaultSelectThreshold = 0.5;

/// Binary mask keeping cells where the cam (resized to h×w) is >= threshold.
/// The cam must already be normalized to [0,1].
ActivationMask selection_mask(const Cam& cam, double threshold, std::size_t height,
                              std::size_t width);

/// Selects descriptors of `field` under the fused cam and packs them.
QueryRepresentation select_and_build(const DescriptorField& field, const Cam& fused_cam,
                                     double select_threshold = kDefaultSelectThreshold);

} // namespace dalign
