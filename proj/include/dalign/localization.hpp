#pragma once

#include "dalign/descriptor.hpp"

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace dalign {

/// Spatial attention weights: `reduce` is a 1×1 bank d→r applied to the raw
/// field; `merge` is a 1×1 bank (2+r)→1 over [channel mean, channel max, reduced].
struct CbamWeights {
    ConvWeights reduce;
    ConvWeights merge;

    void validate(std::size_t field_channels) const;
};

/// Three 3×3 ReLU blocks (padding 1) followed by a 1×1 head with one output
/// channel per training class.
struct ClassifierWeights {
    std::array<ConvWeights, 3> blocks;
    ConvWeights head;

    void validate(std::size_t field_channels) const;
    std::size_t classes() const noexcept { return head.out_channels; }
};

struct SacWeights {
    CbamWeights cbam;
    ClassifierWeights classifier;
};

struct ClassifierOutput {
    std::vector<Cam> class_maps;
    /// Spatial mean of each class map.
    std::vector<double> logits;
};

/// Half-open pixel box [x_min, x_max) × [y_min, y_max); x runs along columns.
struct BBox {
    long x_min = 0;
    long y_min = 0;
    long x_max = 0;
    long y_max = 0;

    BBox() = default;
    BBox(long x0, long y0, long x1, long y1);

    long area() const noexcept { return (x_max - x_min) * (y_max - y_min); }
    bool operator==(const BBox&) const = default;
};

struct WsolRecord {
    BBox predicted;
    BBox ground_truth;
    std::size_t predicted_class = 0;
    std::size_t true_class = 0;
};

struct WsolMetrics {
    double top1_loc = 0.0;
    double top1_clas = 0.0;
    double gt_known_loc = 0.0;
};

/// IoU at or above this value counts as a correct localization.
inline constexpr double kIouThreshold = 0.5;
inline constexpr double kDefaultEraseThreshold = 0.5;
inline constexpr double kDefaultBoxThreshold = 0.2;

/// Logistic function clamped to the open interval (0,1).
double sigmoid(double x);

/// Important mask: sigmoid(merge([mean_c, max_c, reduce(field)])).
ActivationMask cbam_forward(const DescriptorField& field, const CbamWeights& weights);

/// 1 where important < theta_e, else 0. theta_e must lie in (0,1).
ActivationMask erased_mask(const ActivationMask& important, double theta_e);

/// 1 where important >= theta_e, else 0. Complement of erased_mask.
ActivationMask important_binary_mask(const ActivationMask& important, double theta_e);

/// Output S of the three 3×3 ReLU blocks.
DescriptorField classifier_features(const DescriptorField& field, const ClassifierWeights& weights);

/// Class maps A_c(i,j) = Σ_k S_k(i,j)·W_{k,c} + b_c from the 1×1 head, and
/// their spatial means as logits.
ClassifierOutput class_maps_from_features(const DescriptorField& features, const ConvWeights& head);

ClassifierOutput classifier_forward(const DescriptorField& field, const ClassifierWeights& weights);

/// Pointwise maximum of two maps already normalized to [0,1].
Cam fuse_cams(const Cam& cam_imp, const Cam& cam_erased);

/// Numerically stable softmax.
std::vector<double> softmax(std::span<const double> logits);

/// −log softmax(logits)[label].
double cross_entropy(std::span<const double> logits, std::size_t label);

/// Sum of cross entropies of both branches against the same label.
double complementary_classification_loss(std::span<const double> logits_imp,
                                         std::span<const double> logits_erased, std::size_t label);

/// Tight box around the largest 4-connected component of cam >= threshold·max.
/// Equal-area components resolve to the one whose first cell in row-major
/// order comes first.
BBox cam_to_bbox(const Cam& cam, double box_threshold = kDefaultBoxThreshold);

double iou(const BBox& a, const BBox& b);

WsolMetrics wsol_metrics(std::span<const WsolRecord> records);

/// Everything the complementary path produces for one field.
struct SacResult {
    ActivationMask important;
    ActivationMask erased;
    ClassifierOutput imp;
    ClassifierOutput erased_branch;
    std::size_t predicted_class = 0;
    /// Normalized maps for the chosen class, and their fusion.
    Cam cam_imp;
    Cam cam_erased;
    Cam fused;
};

/// Runs attention, both classifier branches and fusion. The maps are taken
/// for `cam_class` when given, otherwise for the top-1 class of the
/// important branch.
SacResult sac_forward(const DescriptorField& field, const SacWeights& weights,
                      double erase_threshold = kDefaultEraseThreshold,
                      std::optional<std::size_t> cam_class = std::nullopt);

/// Index of the largest value; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

} // namespace dalign
