#include "dalign/errors.hpp"
#include "dalign/localization.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace dalign;
using dalign::testing::gaussian_vector;
using dalign::testing::random_conv;
using dalign::testing::random_field;

namespace {

CbamWeights random_cbam(std::size_t d, std::size_t r, std::mt19937_64& rng)
{
    return {random_conv(r, d, 1, rng), random_conv(1, r + 2, 1, rng)};
}

/// The attention pipeline written out one cell at a time.
std::vector<double> oracle_cbam(const DescriptorField& x, const CbamWeights& w)
{
    const std::size_t d = x.channels();
    const std::size_t r = w.reduce.out_channels;
    std::vector<double> out;
    for (std::size_t i = 0; i < x.height(); ++i) {
        for (std::size_t j = 0; j < x.width(); ++j) {
            double mean = 0.0, peak = x.at(0, i, j);
            for (std::size_t c = 0; c < d; ++c) {
                mean += x.at(c, i, j);
                peak = std::max(peak, x.at(c, i, j));
            }
            mean /= static_cast<double>(d);
            std::vector<double> stacked{mean, peak};
            for (std::size_t o = 0; o < r; ++o) {
                double v = w.reduce.bias[o];
                for (std::size_t c = 0; c < d; ++c) {
                    v += w.reduce.weights[o * d + c] * x.at(c, i, j);
                }
                stacked.push_back(v);
            }
            double logit = w.merge.bias[0];
            for (std::size_t k = 0; k < stacked.size(); ++k) {
                logit += w.merge.weights[k] * stacked[k];
            }
            out.push_back(1.0 / (1.0 + std::exp(-logit)));
        }
    }
    return out;
}

ClassifierWeights random_classifier(std::size_t d, std::size_t hidden, std::size_t classes,
                                    std::mt19937_64& rng)
{
    ClassifierWeights w;
    std::size_t in = d;
    for (auto& block : w.blocks) {
        block = random_conv(hidden, in, 3, rng);
        in = hidden;
    }
    w.head = random_conv(classes, hidden, 1, rng);
    return w;
}

} // namespace

TEST_CASE("cbam_forward examples")
{
    std::mt19937_64 rng(41);
    const DescriptorField field = random_field(4, 3, 3, rng);
    const CbamWeights zero{ConvWeights::zeros(2, 4, 1, 1), ConvWeights::zeros(1, 4, 1, 1)};
    const ActivationMask half = cbam_forward(field, zero);
    CHECK(std::all_of(half.values().begin(), half.values().end(), [](double v) { return v == 0.5; }));

    const DescriptorField constant(4, 3, 3, std::vector<double>(36, 1.7));
    const ActivationMask flat = cbam_forward(constant, random_cbam(4, 2, rng));
    for (double v : flat.values()) {
        CHECK(v == flat.values()[0]);
    }

    const CbamWeights weights = random_cbam(4, 3, rng);
    const auto expected = oracle_cbam(field, weights);
    const ActivationMask got = cbam_forward(field, weights);
    for (std::size_t k = 0; k < expected.size(); ++k) {
        CHECK(got.values()[k] == doctest::Approx(expected[k]).epsilon(1e-12));
    }

    CHECK_THROWS_AS(cbam_forward(random_field(5, 3, 3, rng), weights), ShapeError);
}

TEST_CASE("cbam_forward stays strictly inside (0,1)")
{
    std::mt19937_64 rng(43);
    for (int t = 0; t < 50; ++t) {
        const DescriptorField field = random_field(6, 4, 4, rng);
        CbamWeights w = random_cbam(6, 3, rng);
        for (double& v : w.merge.weights) {
            v *= 50.0;  // saturate the logistic
        }
        const ActivationMask mask = cbam_forward(field, w);
        for (double v : mask.values()) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
    }
}

TEST_CASE("erased_mask thresholds strictly below theta")
{
    CHECK(erased_mask(ActivationMask(2, 2, 0.9), 0.5) == ActivationMask(2, 2, 0.0));
    CHECK(erased_mask(ActivationMask(2, 2, 0.1), 0.5) == ActivationMask(2, 2, 1.0));
    CHECK(erased_mask(ActivationMask(1, 2, {0.2, 0.8}), 0.5) == ActivationMask(1, 2, {1.0, 0.0}));
    CHECK(erased_mask(ActivationMask(1, 1, 0.5), 0.5) == ActivationMask(1, 1, 0.0));
    CHECK_THROWS_AS(erased_mask(ActivationMask(1, 1, 0.5), 0.0), DomainError);
    CHECK_THROWS_AS(erased_mask(ActivationMask(1, 1, 0.5), 1.0), DomainError);
}

TEST_CASE("erased and important masks partition the grid")
{
    std::mt19937_64 rng(47);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int t = 0; t < 100; ++t) {
        std::vector<double> v(20);
        for (double& x : v) {
            x = unit(rng);
        }
        v[3] = 0.5;  // a cell exactly at the threshold
        const ActivationMask m(4, 5, v);
        const double theta = t == 0 ? 0.5 : std::clamp(unit(rng), 0.01, 0.99);
        const ActivationMask e = erased_mask(m, theta);
        const ActivationMask b = important_binary_mask(m, theta);
        for (std::size_t k = 0; k < 20; ++k) {
            CHECK(e.values()[k] + b.values()[k] == 1.0);
        }
    }
}

TEST_CASE("class maps follow the 1x1 head formula")
{
    std::mt19937_64 rng(53);
    const DescriptorField s = random_field(3, 4, 4, rng);

    const ConvWeights zero_head(2, 3, 1, 1, std::vector<double>(6, 0.0), {0.25, -1.5});
    const ClassifierOutput biased = class_maps_from_features(s, zero_head);
    for (std::size_t c = 0; c < 2; ++c) {
        CHECK(biased.logits[c] == zero_head.bias[c]);
        for (double v : biased.class_maps[c].values()) {
            CHECK(v == zero_head.bias[c]);
        }
    }

    const DescriptorField single = random_field(1, 3, 3, rng);
    const ClassifierOutput copy =
        class_maps_from_features(single, ConvWeights(3, 1, 1, 1, {1.0, 1.0, 1.0}, {0, 0, 0}));
    for (const Cam& map : copy.class_maps) {
        CHECK(std::vector<double>(map.values().begin(), map.values().end()) ==
              std::vector<double>(single.values().begin(), single.values().end()));
    }
}

TEST_CASE("classifier_forward agrees with a direct evaluation of the head sum")
{
    std::mt19937_64 rng(59);
    for (int t = 0; t < 20; ++t) {
        const DescriptorField x = random_field(3, 4, 3, rng);
        const ClassifierWeights w = random_classifier(3, 2, 2, rng);
        const ClassifierOutput out = classifier_forward(x, w);
        const DescriptorField s = classifier_features(x, w);
        REQUIRE(s.channels() == 2);
        for (std::size_t c = 0; c < 2; ++c) {
            double mean = 0.0;
            for (std::size_t i = 0; i < 4; ++i) {
                for (std::size_t j = 0; j < 3; ++j) {
                    double a = w.head.bias[c];
                    for (std::size_t k = 0; k < 2; ++k) {
                        a += s.at(k, i, j) * w.head.weight(c, k, 0, 0);
                    }
                    CHECK(std::abs(out.class_maps[c].at(i, j) - a) < 1e-12);
                    mean += out.class_maps[c].at(i, j);
                }
            }
            CHECK(std::abs(out.logits[c] - mean / 12.0) < 1e-12);
        }
    }
    CHECK_THROWS_AS(classifier_forward(random_field(4, 3, 3, rng), random_classifier(3, 2, 2, rng)),
                    ShapeError);
}

TEST_CASE("fuse_cams is a pointwise max")
{
    const Cam a(1, 2, {0.2, 0.9});
    const Cam b(1, 2, {0.5, 0.1});
    CHECK(fuse_cams(a, b) == Cam(1, 2, {0.5, 0.9}));
    CHECK(fuse_cams(a, a) == a);
    CHECK(fuse_cams(a, Cam(1, 2, 0.0)) == a);
    CHECK_THROWS_AS(fuse_cams(a, Cam(2, 1, 0.0)), ShapeError);
    CHECK_THROWS_AS(fuse_cams(a, Cam(1, 2, 2.0)), DomainError);

    std::mt19937_64 rng(61);
    for (int t = 0; t < 50; ++t) {
        const Cam x = Cam(3, 3, gaussian_vector(9, rng)).normalized();
        const Cam y = Cam(3, 3, gaussian_vector(9, rng)).normalized();
        const Cam f = fuse_cams(x, y);
        CHECK(f == fuse_cams(y, x));
        for (std::size_t k = 0; k < 9; ++k) {
            CHECK(f.values()[k] >= x.values()[k]);
            CHECK(f.values()[k] >= y.values()[k]);
        }
    }
}

TEST_CASE("complementary_classification_loss")
{
    const std::vector<double> uniform(5, 0.3);
    CHECK(complementary_classification_loss(uniform, uniform, 2) ==
          doctest::Approx(2.0 * std::log(5.0)).epsilon(1e-14));

    // −log softmax([10, −10])[0] = log(1 + e^−20)
    const std::vector<double> confident{10.0, -10.0};
    CHECK(cross_entropy(confident, 0) == doctest::Approx(std::log1p(std::exp(-20.0))).epsilon(1e-6));
    CHECK(cross_entropy(confident, 0) == doctest::Approx(2.06e-9).epsilon(1e-2));

    std::mt19937_64 rng(67);
    for (int t = 0; t < 100; ++t) {
        const auto a = gaussian_vector(4, rng, 3.0);
        const auto b = gaussian_vector(4, rng, 3.0);
        CHECK(complementary_classification_loss(a, b, t % 4) >= 0.0);
    }
    CHECK_THROWS_AS(complementary_classification_loss(uniform, uniform, 5), DomainError);
}

TEST_CASE("softmax is invariant to a common shift")
{
    std::mt19937_64 rng(71);
    for (int t = 0; t < 100; ++t) {
        auto z = gaussian_vector(6, rng, 4.0);
        const auto p = softmax(z);
        for (double& v : z) {
            v += 7.3;
        }
        const auto q = softmax(z);
        for (std::size_t k = 0; k < p.size(); ++k) {
            CHECK(std::abs(p[k] - q[k]) < 1e-12);
        }
    }
}

TEST_CASE("cam_to_bbox examples")
{
    std::vector<double> hot(5 * 6, 0.0);
    hot[2 * 6 + 3] = 1.0;
    CHECK(cam_to_bbox(Cam(5, 6, hot), 0.2) == BBox(3, 2, 4, 3));

    CHECK(cam_to_bbox(Cam(4, 3, 1.0), 0.2) == BBox(0, 0, 3, 4));

    // Blob A: 6 cells in the top-left; blob B: 3 cells on the right edge.
    const Cam blobs(4, 6, {
                              1, 1, 1, 0, 0, 0.9,  //
                              1, 1, 1, 0, 0, 0.9,  //
                              0, 0, 0, 0, 0, 0.9,  //
                              0, 0, 0, 0, 0, 0,    //
                          });
    CHECK(cam_to_bbox(blobs, 0.2) == BBox(0, 0, 3, 2));

    // Equal areas: the component reached first in row-major order wins.
    const Cam twins(3, 5, {
                              0, 0, 0, 1, 1,  //
                              1, 1, 0, 0, 0,  //
                              0, 0, 0, 0, 0,  //
                          });
    CHECK(cam_to_bbox(twins, 0.5) == BBox(3, 0, 5, 1));

    // Diagonal neighbours are not 4-connected.
    const Cam diagonal(2, 2, {1, 0, 0, 1});
    CHECK(cam_to_bbox(diagonal, 0.5) == BBox(0, 0, 1, 1));

    CHECK_THROWS_AS(cam_to_bbox(Cam(3, 3, 0.0), 0.2), DomainError);
    CHECK_THROWS_AS(cam_to_bbox(blobs, 1.5), DomainError);
}

TEST_CASE("iou examples and properties")
{
    const BBox a(0, 0, 2, 2);
    CHECK(iou(a, a) == 1.0);
    CHECK(iou(a, BBox(5, 5, 6, 6)) == 0.0);
    CHECK(iou(a, BBox(1, 0, 3, 2)) == doctest::Approx(2.0 / 6.0).epsilon(1e-15));
    CHECK_THROWS_AS(BBox(1, 0, 1, 2), DomainError);

    std::mt19937_64 rng(73);
    std::uniform_int_distribution<long> coord(0, 6);
    for (int t = 0; t < 500; ++t) {
        const long x0 = coord(rng), y0 = coord(rng), x1 = x0 + 1 + coord(rng), y1 = y0 + 1 + coord(rng);
        const long u0 = coord(rng), v0 = coord(rng), u1 = u0 + 1 + coord(rng), v1 = v0 + 1 + coord(rng);
        const BBox p(x0, y0, x1, y1), q(u0, v0, u1, v1);
        const double v = iou(p, q);
        CHECK(v == iou(q, p));
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        CHECK((v == 1.0) == (p == q));
    }
}

TEST_CASE("wsol_metrics applies the conjunction rule")
{
    const BBox gt(0, 0, 10, 10);
    const std::vector<WsolRecord> perfect{{gt, gt, 1, 1}, {gt, gt, 0, 0}};
    const WsolMetrics all = wsol_metrics(perfect);
    CHECK(all.top1_loc == 1.0);
    CHECK(all.top1_clas == 1.0);
    CHECK(all.gt_known_loc == 1.0);

    // IoU 0.6 with the wrong class, IoU 0.4 with the right class.
    const BBox gt6(0, 0, 5, 2), pred6(0, 0, 3, 2);         // 6 / 10
    const BBox gt4(0, 0, 10, 1), pred4(0, 0, 4, 1);        // 4 / 10
    REQUIRE(iou(pred6, gt6) == doctest::Approx(0.6));
    REQUIRE(iou(pred4, gt4) == doctest::Approx(0.4));
    const std::vector<WsolRecord> mixed{{pred6, gt6, 2, 1}, {pred4, gt4, 3, 3}};
    const WsolMetrics m = wsol_metrics(mixed);
    CHECK(m.top1_loc == 0.0);
    CHECK(m.top1_clas == 0.5);
    CHECK(m.gt_known_loc == 0.5);

    // IoU of exactly one half counts as localized.
    const BBox half(0, 0, 2, 2), half_gt(0, 0, 4, 2);
    REQUIRE(iou(half, half_gt) == 0.5);
    const std::vector<WsolRecord> boundary{{half, half_gt, 0, 0}};
    CHECK(wsol_metrics(boundary).gt_known_loc == 1.0);
    CHECK(wsol_metrics(boundary).top1_loc == 1.0);

    CHECK_THROWS_AS(wsol_metrics(std::vector<WsolRecord>{}), DomainError);
}

TEST_CASE("sac_forward wires attention, both branches and fusion")
{
    std::mt19937_64 rng(79);
    const DescriptorField field = random_field(4, 5, 5, rng);
    SacWeights w{random_cbam(4, 2, rng), random_classifier(4, 3, 3, rng)};
    const SacResult r = sac_forward(field, w, 0.5);

    CHECK(r.erased == erased_mask(r.important, 0.5));
    const ClassifierOutput imp = classifier_forward(spatial_multiply(field, r.important), w.classifier);
    const ClassifierOutput era = classifier_forward(spatial_multiply(field, r.erased), w.classifier);
    CHECK(imp.logits == r.imp.logits);
    CHECK(era.logits == r.erased_branch.logits);
    CHECK(r.predicted_class == argmax(imp.logits));
    CHECK(r.fused == fuse_cams(imp.class_maps[r.predicted_class].normalized(),
                               era.class_maps[r.predicted_class].normalized()));

    const SacResult forced = sac_forward(field, w, 0.5, 2);
    CHECK(forced.cam_imp == imp.class_maps[2].normalized());
    CHECK_THROWS_AS(sac_forward(field, w, 0.5, 7), DomainError);
}
