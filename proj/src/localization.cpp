#include "dalign/localization.hpp"

#include "dalign/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

namespace dalign {

namespace {

void require_threshold(double theta, const char* name)
{
    if (!(theta > 0.0 && theta < 1.0)) {
        throw DomainError(fmt::format("{} must lie in (0,1), got {}", name, theta));
    }
}

void require_kernel(const ConvWeights& w, std::size_t k, const char* name)
{
    w.validate();
    if (w.kernel_h != k || w.kernel_w != k) {
        throw ShapeError(fmt::format("{} must use a {}x{} kernel", name, k, k));
    }
}

DescriptorField relu(DescriptorField field)
{
    for (double& v : field.values()) {
        v = std::max(v, 0.0);
    }
    return field;
}

} // namespace

void CbamWeights::validate(std::size_t field_channels) const
{
    require_kernel(reduce, 1, "attention reduce layer");
    require_kernel(merge, 1, "attention merge layer");
    if (reduce.in_channels != field_channels) {
        throw ShapeError(fmt::format("attention expects {} channels, field has {}",
                                     reduce.in_channels, field_channels));
    }
    if (merge.in_channels != reduce.out_channels + 2 || merge.out_channels != 1) {
        throw ShapeError(fmt::format("attention merge must map {} channels to 1",
                                     reduce.out_channels + 2));
    }
}

void ClassifierWeights::validate(std::size_t field_channels) const
{
    std::size_t channels = field_channels;
    for (const auto& block : blocks) {
        require_kernel(block, 3, "classifier block");
        if (block.in_channels != channels) {
            throw ShapeError(fmt::format("classifier block expects {} channels, receives {}",
                                         block.in_channels, channels));
        }
        channels = block.out_channels;
    }
    require_kernel(head, 1, "classifier head");
    if (head.in_channels != channels) {
        throw ShapeError(fmt::format("classifier head expects {} channels, receives {}",
                                     head.in_channels, channels));
    }
}

BBox::BBox(long x0, long y0, long x1, long y1) : x_min(x0), y_min(y0), x_max(x1), y_max(y1)
{
    if (x_min >= x_max || y_min >= y_max) {
        throw DomainError(fmt::format("box [{},{})x[{},{}) has no area", x0, x1, y0, y1));
    }
}

double sigmoid(double x)
{
    constexpr double lo = std::numeric_limits<double>::denorm_min();
    const double hi = std::nextafter(1.0, 0.0);
    const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    return std::clamp(s, lo, hi);
}

ActivationMask cbam_forward(const DescriptorField& field, const CbamWeights& weights)
{
    weights.validate(field.channels());
    const std::size_t cells = field.cells();

    DescriptorField mean_map(1, field.height(), field.width());
    DescriptorField max_map(1, field.height(), field.width());
    for (std::size_t k = 0; k < cells; ++k) {
        double sum = 0.0;
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < field.channels(); ++c) {
            const double v = field.values()[c * cells + k];
            sum += v;
            best = std::max(best, v);
        }
        mean_map.values()[k] = sum / static_cast<double>(field.channels());
        max_map.values()[k] = best;
    }

    const std::array<DescriptorField, 3> parts{mean_map, max_map,
                                               conv2d_forward(field, weights.reduce, 0)};
    const DescriptorField logits = conv2d_forward(concat_channels(parts), weights.merge, 0);

    std::vector<double> mask(cells);
    for (std::size_t k = 0; k < cells; ++k) {
        mask[k] = sigmoid(logits.values()[k]);
    }
    return {field.height(), field.width(), std::move(mask)};
}

ActivationMask erased_mask(const ActivationMask& important, double theta_e)
{
    require_threshold(theta_e, "erase threshold");
    std::vector<double> out(important.cells());
    for (std::size_t k = 0; k < out.size(); ++k) {
        out[k] = important.values()[k] < theta_e ? 1.0 : 0.0;
    }
    return {important.height(), important.width(), std::move(out)};
}

ActivationMask important_binary_mask(const ActivationMask& important, double theta_e)
{
    require_threshold(theta_e, "erase threshold");
    std::vector<double> out(important.cells());
    for (std::size_t k = 0; k < out.size(); ++k) {
        out[k] = important.values()[k] >= theta_e ? 1.0 : 0.0;
    }
    return {important.height(), important.width(), std::move(out)};
}

DescriptorField classifier_features(const DescriptorField& field, const ClassifierWeights& weights)
{
    weights.validate(field.channels());
    DescriptorField x = field;
    for (const auto& block : weights.blocks) {
        x = relu(conv2d_forward(x, block, 1));
    }
    return x;
}

ClassifierOutput class_maps_from_features(const DescriptorField& features, const ConvWeights& head)
{
    require_kernel(head, 1, "classifier head");
    const DescriptorField maps = conv2d_forward(features, head, 0);
    ClassifierOutput out;
    out.class_maps.reserve(head.out_channels);
    out.logits.reserve(head.out_channels);
    for (std::size_t c = 0; c < head.out_channels; ++c) {
        const auto plane = maps.plane(c);
        out.class_maps.emplace_back(maps.height(), maps.width(),
                                    std::vector<double>(plane.begin(), plane.end()));
        out.logits.push_back(std::accumulate(plane.begin(), plane.end(), 0.0) /
                             static_cast<double>(plane.size()));
    }
    return out;
}

ClassifierOutput classifier_forward(const DescriptorField& field, const ClassifierWeights& weights)
{
    return class_maps_from_features(classifier_features(field, weights), weights.head);
}

Cam fuse_cams(const Cam& cam_imp, const Cam& cam_erased)
{
    if (cam_imp.height() != cam_erased.height() || cam_imp.width() != cam_erased.width()) {
        throw ShapeError("fused maps must share a shape");
    }
    std::vector<double> out(cam_imp.cells());
    for (std::size_t k = 0; k < out.size(); ++k) {
        const double a = cam_imp.values()[k];
        const double b = cam_erased.values()[k];
        if (a < 0.0 || a > 1.0 || b < 0.0 || b > 1.0) {
            throw DomainError("fusion expects maps normalized to [0,1]");
        }
        out[k] = std::max(a, b);
    }
    return {cam_imp.height(), cam_imp.width(), std::move(out)};
}

std::vector<double> softmax(std::span<const double> logits)
{
    if (logits.empty()) {
        throw DomainError("softmax of an empty vector");
    }
    const double top = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double total = 0.0;
    for (std::size_t k = 0; k < logits.size(); ++k) {
        out[k] = std::exp(logits[k] - top);
        total += out[k];
    }
    for (double& p : out) {
        p /= total;
    }
    return out;
}

double cross_entropy(std::span<const double> logits, std::size_t label)
{
    if (label >= logits.size()) {
        throw DomainError(fmt::format("label {} outside {} classes", label, logits.size()));
    }
    const double top = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (double z : logits) {
        total += std::exp(z - top);
    }
    return std::log(total) - (logits[label] - top);
}

double complementary_classification_loss(std::span<const double> logits_imp,
                                         std::span<const double> logits_erased, std::size_t label)
{
    if (logits_imp.size() != logits_erased.size()) {
        throw ShapeError("both branches must score the same classes");
    }
    return cross_entropy(logits_imp, label) + cross_entropy(logits_erased, label);
}

BBox cam_to_bbox(const Cam& cam, double box_threshold)
{
    require_threshold(box_threshold, "box threshold");
    const double peak = cam.max();
    if (!(peak > 0.0)) {
        throw DomainError("cannot extract a box from a map without positive activation");
    }
    const double cut = box_threshold * peak;
    const std::size_t h = cam.height();
    const std::size_t w = cam.width();

    std::vector<char> visited(h * w, 0);
    std::vector<std::size_t> stack;
    std::size_t best_area = 0;
    BBox best;
    for (std::size_t start = 0; start < h * w; ++start) {
        if (visited[start] || cam.values()[start] < cut) {
            continue;
        }
        std::size_t area = 0;
        std::size_t r0 = h, c0 = w, r1 = 0, c1 = 0;
        visited[start] = 1;
        stack.push_back(start);
        while (!stack.empty()) {
            const std::size_t cell = stack.back();
            stack.pop_back();
            const std::size_t r = cell / w;
            const std::size_t c = cell % w;
            ++area;
            r0 = std::min(r0, r);
            r1 = std::max(r1, r);
            c0 = std::min(c0, c);
            c1 = std::max(c1, c);
            const auto visit = [&](std::size_t next) {
                if (!visited[next] && cam.values()[next] >= cut) {
                    visited[next] = 1;
                    stack.push_back(next);
                }
            };
            if (r > 0) visit(cell - w);
            if (r + 1 < h) visit(cell + w);
            if (c > 0) visit(cell - 1);
            if (c + 1 < w) visit(cell + 1);
        }
        if (area > best_area) {
            best_area = area;
            best = BBox(static_cast<long>(c0), static_cast<long>(r0), static_cast<long>(c1) + 1,
                        static_cast<long>(r1) + 1);
        }
    }
    return best;
}

double iou(const BBox& a, const BBox& b)
{
    const long ix = std::max(0L, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
    const long iy = std::max(0L, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
    const long inter = ix * iy;
    const long uni = a.area() + b.area() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

WsolMetrics wsol_metrics(std::span<const WsolRecord> records)
{
    if (records.empty()) {
        throw DomainError("localization metrics need at least one record");
    }
    std::size_t loc = 0, clas = 0, both = 0;
    for (const auto& r : records) {
        const bool located = iou(r.predicted, r.ground_truth) >= kIouThreshold;
        const bool classified = r.predicted_class == r.true_class;
        loc += located;
        clas += classified;
        both += located && classified;
    }
    const auto n = static_cast<double>(records.size());
    return {static_cast<double>(both) / n, static_cast<double>(clas) / n,
            static_cast<double>(loc) / n};
}

std::size_t argmax(std::span<const double> values)
{
    if (values.empty()) {
        throw DomainError("argmax of an empty vector");
    }
    std::size_t best = 0;
    for (std::size_t k = 1; k < values.size(); ++k) {
        if (values[k] > values[best]) {
            best = k;
        }
    }
    return best;
}

SacResult sac_forward(const DescriptorField& field, const SacWeights& weights,
                      double erase_threshold, std::optional<std::size_t> cam_class)
{
    ActivationMask important = cbam_forward(field, weights.cbam);
    ActivationMask erased = erased_mask(important, erase_threshold);

    ClassifierOutput imp = classifier_forward(spatial_multiply(field, important), weights.classifier);
    ClassifierOutput era = classifier_forward(spatial_multiply(field, erased), weights.classifier);

    const std::size_t predicted = argmax(imp.logits);
    const std::size_t chosen = cam_class.value_or(predicted);
    if (chosen >= imp.class_maps.size()) {
        throw DomainError(fmt::format("class {} outside the classifier's {} classes", chosen,
                                      imp.class_maps.size()));
    }
    Cam cam_imp = imp.class_maps[chosen].normalized();
    Cam cam_erased = era.class_maps[chosen].normalized();
    Cam fused = fuse_cams(cam_imp, cam_erased);
    return {std::move(important), std::move(erased), std::move(imp), std::move(era), predicted,
            std::move(cam_imp), std::move(cam_erased), std::move(fused)};
}

} // namespace dalign
