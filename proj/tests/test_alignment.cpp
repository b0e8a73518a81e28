#include "dalign/alignment.hpp"
#include "dalign/errors.hpp"
#include "dalign/gradcheck.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace dalign;
using dalign::testing::oracle_alignment;
using dalign::testing::random_descriptors;
using dalign::testing::random_field;

namespace {

const NnBackend kBackends[] = {NnBackend::reference, NnBackend::blocked};

} // namespace

TEST_CASE("alignment_distance examples")
{
    for (NnBackend backend : kBackends) {
        const auto unit = QueryRepresentation::from_descriptors({{0.6, 0.8}});
        const auto self = alignment_distance(unit, SupportPool::from_descriptors(0, {{0.6, 0.8}}), backend);
        CHECK(self.distance == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(self.nn_indices == std::vector<std::size_t>{0});

        const auto exact = alignment_distance(QueryRepresentation::from_descriptors({{1, 0}}),
                                              SupportPool::from_descriptors(0, {{0, 1}, {1, 0}}),
                                              backend);
        CHECK(exact.distance == 1.0);
        CHECK(exact.nn_indices == std::vector<std::size_t>{1});

        // Duplicate entries tie; the lower index wins.
        const auto tie = alignment_distance(QueryRepresentation::from_descriptors({{1, 1}}),
                                            SupportPool::from_descriptors(0, {{0, 1}, {2, 2}, {2, 2}}),
                                            backend);
        CHECK(tie.nn_indices == std::vector<std::size_t>{1});
    }

    std::mt19937_64 rng(83);
    const auto q = random_descriptors(4, 3, rng);
    const auto s = random_descriptors(7, 3, rng);
    const auto oracle = oracle_alignment(q, s);
    for (NnBackend backend : kBackends) {
        const auto got = alignment_distance(QueryRepresentation::from_descriptors(q),
                                            SupportPool::from_descriptors(0, s), backend);
        CHECK(got.distance == oracle.distance);
        CHECK(got.nn_indices == oracle.indices);
    }

    CHECK_THROWS_AS(alignment_distance(QueryRepresentation::from_descriptors(q), SupportPool(0, 3)),
                    DomainError);
    CHECK_THROWS_AS(alignment_distance(QueryRepresentation::from_descriptors(q),
                                       SupportPool::from_descriptors(0, {{1.0, 2.0}})),
                    ShapeError);
}

TEST_CASE("both backends match the exhaustive oracle bit for bit across tile edges")
{
    std::mt19937_64 rng(89);
    std::uniform_int_distribution<std::size_t> count(1, 150);
    std::uniform_int_distribution<std::size_t> dim(1, 12);
    for (int t = 0; t < 60; ++t) {
        const std::size_t d = dim(rng);
        const auto q = random_descriptors(count(rng) % 20 + 1, d, rng);
        const auto s = random_descriptors(count(rng), d, rng);
        const auto oracle = oracle_alignment(q, s);
        const auto query = QueryRepresentation::from_descriptors(q);
        const auto pool = SupportPool::from_descriptors(0, s);
        for (NnBackend backend : kBackends) {
            const auto got = alignment_distance(query, pool, backend);
            CHECK(got.distance == oracle.distance);
            CHECK(got.nn_indices == oracle.indices);
        }
    }
}

TEST_CASE("alignment_distance invariants")
{
    std::mt19937_64 rng(97);
    for (int t = 0; t < 50; ++t) {
        const auto q = random_descriptors(6, 5, rng);
        auto s = random_descriptors(20, 5, rng);
        const auto query = QueryRepresentation::from_descriptors(q);
        const auto pool = SupportPool::from_descriptors(1, s);
        const auto base = alignment_distance(query, pool);

        // Permuting the pool permutes the indices and keeps the value.
        std::vector<std::size_t> order(s.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        const auto shuffled = alignment_distance(query, pool.permuted(order));
        CHECK(shuffled.distance == base.distance);
        for (std::size_t i = 0; i < q.size(); ++i) {
            CHECK(order[shuffled.nn_indices[i]] == base.nn_indices[i]);
        }

        // Adding an entry never lowers the distance.
        s.push_back(dalign::testing::gaussian_vector(5, rng));
        CHECK(alignment_distance(query, SupportPool::from_descriptors(1, s)).distance >= base.distance);

        CHECK(std::abs(base.distance) <= static_cast<double>(q.size()));

        // Positive scaling of the query leaves every cosine in place.
        const auto scaled = alignment_distance(query.scaled(3.7), pool);
        CHECK(scaled.nn_indices == base.nn_indices);
        CHECK(scaled.distance == doctest::Approx(base.distance).epsilon(1e-12));
    }
}

TEST_CASE("pools and queries skip zero descriptors")
{
    DescriptorField field(2, 1, 3, {1.0, 0.0, 3.0, 2.0, 0.0, 4.0});
    const auto query = QueryRepresentation::from_field(field);
    CHECK(query.size() == 2);
    CHECK(query.coordinate(1) == std::pair<std::size_t, std::size_t>{0, 2});
    const std::vector<DescriptorField> fields{field, field};
    const auto pool = SupportPool::from_fields(4, fields);
    CHECK(pool.size() == 4);
    CHECK(pool.class_id() == 4);
    CHECK(pool.descriptor(1) == std::vector<double>{3.0, 4.0});

    CHECK_THROWS_AS(QueryRepresentation::from_field(DescriptorField(2, 2, 2)), EmptySelectionError);
    CHECK_THROWS_AS(SupportPool::from_descriptors(0, {{0.0, 0.0}}), DomainError);
}

TEST_CASE("class_probabilities examples")
{
    const auto uniform = class_probabilities(std::vector<double>(5, 2.5));
    for (double p : uniform) {
        CHECK(p == doctest::Approx(0.2).epsilon(1e-15));
    }
    const auto two = class_probabilities(std::vector<double>{std::log(2.0), 0.0});
    CHECK(two[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(two[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

    std::mt19937_64 rng(101);
    for (int t = 0; t < 100; ++t) {
        auto d = dalign::testing::gaussian_vector(5, rng, 4.0);
        const auto p = class_probabilities(d);
        CHECK(std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) < 1e-12);
        CHECK(std::all_of(p.begin(), p.end(), [](double v) { return v > 0.0 && v < 1.0; }));
        for (double& v : d) {
            v += 7.3;
        }
        const auto shifted = class_probabilities(d);
        for (std::size_t k = 0; k < p.size(); ++k) {
            CHECK(std::abs(p[k] - shifted[k]) < 1e-12);
        }
    }
    CHECK_THROWS_AS(class_probabilities(std::vector<double>{1.0, NAN}), DomainError);
}

TEST_CASE("classify examples")
{
    std::mt19937_64 rng(103);
    const auto q = random_descriptors(3, 4, rng);
    const auto query = QueryRepresentation::from_descriptors(q);
    const std::vector<SupportPool> single{SupportPool::from_descriptors(9, random_descriptors(5, 4, rng))};
    CHECK(classify(query, single) == 9);

    const std::vector<SupportPool> ab{SupportPool::from_descriptors(0, {{0, 0, 1}}),
                                      SupportPool::from_descriptors(1, {{1, 1, 0}})};
    CHECK(classify(QueryRepresentation::from_descriptors({{1, 1, 0}, {2, 2, 0}}), ab) == 1);

    // Identical pools tie; the earlier pool wins.
    const std::vector<SupportPool> twins{SupportPool::from_descriptors(5, {{1, 0}}),
                                         SupportPool::from_descriptors(2, {{1, 0}})};
    CHECK(classify(QueryRepresentation::from_descriptors({{1, 1}}), twins) == 5);

    // Seeded 3-way instances against the oracle classifier.
    for (int t = 0; t < 30; ++t) {
        const auto qd = random_descriptors(5, 6, rng);
        std::vector<SupportPool> pools;
        double best = -INFINITY;
        std::size_t expected = 0;
        for (std::size_t k = 0; k < 3; ++k) {
            const auto s = random_descriptors(10, 6, rng);
            pools.push_back(SupportPool::from_descriptors(k, s));
            const double dist = oracle_alignment(qd, s).distance;
            if (dist > best) {
                best = dist;
                expected = k;
            }
        }
        const auto rep = QueryRepresentation::from_descriptors(qd);
        CHECK(classify(rep, pools, NnBackend::reference) == expected);
        CHECK(classify(rep, pools, NnBackend::blocked) == expected);
        CHECK(classify(rep.scaled(0.01), pools) == expected);
    }
}

TEST_CASE("episode_loss examples")
{
    // Every pool identical → equal distances → uniform probabilities.
    std::vector<SupportPool> same;
    for (std::size_t k = 0; k < 5; ++k) {
        same.push_back(SupportPool::from_descriptors(k, {{1, 2}, {-1, 0}}));
    }
    const std::vector<LabeledQuery> one{{QueryRepresentation::from_descriptors({{0.3, 1.0}}), 2}};
    CHECK(episode_loss(one, same) == doctest::Approx(std::log(5.0)).epsilon(1e-14));

    // Two classes with distances {1, 1} when the query matches both pools
    // exactly: p_true = 0.5 on each of three queries.
    const std::vector<SupportPool> halves{SupportPool::from_descriptors(0, {{1, 0}}),
                                          SupportPool::from_descriptors(1, {{2, 0}})};
    std::vector<LabeledQuery> three;
    for (std::size_t n = 0; n < 3; ++n) {
        three.push_back({QueryRepresentation::from_descriptors({{1.0 + n, 0.0}}), n % 2});
    }
    CHECK(episode_loss(three, halves) == doctest::Approx(3.0 * std::log(2.0)).epsilon(1e-14));

    std::mt19937_64 rng(107);
    std::vector<SupportPool> pools;
    for (std::size_t k = 0; k < 3; ++k) {
        pools.push_back(SupportPool::from_descriptors(k, random_descriptors(4, 3, rng)));
    }
    std::vector<LabeledQuery> random_queries;
    for (std::size_t n = 0; n < 6; ++n) {
        random_queries.push_back({QueryRepresentation::from_descriptors(random_descriptors(2, 3, rng)), n % 3});
    }
    CHECK(episode_loss(random_queries, pools) >= 0.0);

    const std::vector<LabeledQuery> stray{{QueryRepresentation::from_descriptors({{1, 0, 0}}), 8}};
    CHECK_THROWS_AS(episode_loss(stray, pools), DomainError);
}

TEST_CASE("loss gradient: orthogonality, saturation and finite differences")
{
    std::mt19937_64 rng(109);
    for (int t = 0; t < 30; ++t) {
        const auto q = random_descriptors(3, 4, rng);
        std::vector<SupportPool> pools;
        for (std::size_t k = 0; k < 3; ++k) {
            pools.push_back(SupportPool::from_descriptors(k, random_descriptors(5, 4, rng)));
        }
        const std::vector<LabeledQuery> batch{{QueryRepresentation::from_descriptors(q), 1}};
        const auto grad = loss_gradient_wrt_query(batch, pools);
        // Cosine is scale invariant, so the gradient is orthogonal to each descriptor.
        for (std::size_t i = 0; i < q.size(); ++i) {
            double dot = 0.0;
            for (std::size_t c = 0; c < 4; ++c) {
                dot += q[i][c] * grad[0][i * 4 + c];
            }
            CHECK(std::abs(dot) < 1e-12);
        }
    }

    // Many aligned descriptors push p_true towards 1 and the gradient towards 0.
    std::vector<std::vector<double>> aligned(40, std::vector<double>{1.0, 0.0});
    const std::vector<SupportPool> pools{SupportPool::from_descriptors(0, {{1.0, 0.0}}),
                                         SupportPool::from_descriptors(1, {{-1.0, 0.1}})};
    const std::vector<LabeledQuery> saturated{{QueryRepresentation::from_descriptors(aligned), 0}};
    double norm = 0.0;
    const auto saturated_grad = loss_gradient_wrt_query(saturated, pools);
    for (double g : saturated_grad[0]) {
        norm += g * g;
    }
    CHECK(std::sqrt(norm) < 1e-20);

    // Single query, single descriptor, two classes.
    const auto d = random_descriptors(1, 3, rng);
    const std::vector<SupportPool> two{SupportPool::from_descriptors(0, random_descriptors(3, 3, rng)),
                                       SupportPool::from_descriptors(1, random_descriptors(3, 3, rng))};
    const auto analytic = loss_gradient_wrt_query(
        std::vector<LabeledQuery>{{QueryRepresentation::from_descriptors(d), 0}}, two);
    const double h = 1e-5;
    for (std::size_t c = 0; c < 3; ++c) {
        auto up = d, down = d;
        up[0][c] += h;
        down[0][c] -= h;
        const double lu = episode_loss(std::vector<LabeledQuery>{{QueryRepresentation::from_descriptors(up), 0}}, two);
        const double ld = episode_loss(std::vector<LabeledQuery>{{QueryRepresentation::from_descriptors(down), 0}}, two);
        const double numeric = (lu - ld) / (2 * h);
        CHECK(std::abs(numeric - analytic[0][c]) <=
              1e-4 * std::max({std::abs(numeric), std::abs(analytic[0][c]), 1e-6}));
    }
}

TEST_CASE("run_gradient_check on a small seeded batch")
{
    GradCheckConfig config;
    config.instances = 10;
    config.seed = 5;
    const GradCheckResult r = run_gradient_check(config);
    CHECK(r.instances == 10);
    CHECK(r.components > 0);
    CHECK(r.max_relative_error < 1e-4);
    config.step = 0.0;
    CHECK_THROWS_AS(run_gradient_check(config), DomainError);
}

TEST_CASE("select_and_build examples")
{
    std::mt19937_64 rng(113);
    const DescriptorField field = random_field(3, 2, 2, rng);
    CHECK(select_and_build(field, Cam(2, 2, 1.0), 0.5).size() == 4);
    CHECK_THROWS_AS(select_and_build(field, Cam(2, 2, 0.0), 0.5), EmptySelectionError);

    const auto diag = select_and_build(field, Cam(2, 2, {1, 0, 0, 1}), 0.5);
    REQUIRE(diag.size() == 2);
    CHECK(diag.coordinate(0) == std::pair<std::size_t, std::size_t>{0, 0});
    CHECK(diag.coordinate(1) == std::pair<std::size_t, std::size_t>{1, 1});
    const auto kept = descriptor_at(field, 1, 1);
    CHECK(std::vector<double>(diag.descriptor(1).begin(), diag.descriptor(1).end()) == kept);

    // A coarser map is resized by nearest lookup onto the field grid.
    const DescriptorField big = random_field(3, 4, 4, rng);
    const auto upsampled = select_and_build(big, Cam(2, 2, {1, 0, 0, 0}), 0.5);
    CHECK(upsampled.size() == 4);

    CHECK_THROWS_AS(select_and_build(field, Cam(2, 2, 3.0), 0.5), DomainError);
    CHECK_THROWS_AS(select_and_build(field, Cam(2, 2, 1.0), 0.0), DomainError);
}
