// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "ptum/tensor.hpp"

using namespace ptum;

namespace {

Tensor random_leaf(std::vector<std::size_t> shape, std::mt19937_64& rng, double scale = 1.0) {
    std::uniform_real_distribution<double> dist(-scale, scale);
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    std::vector<double> v(n);
    for (auto& x : v) x = dist(rng);
    return Tensor::from_data(std::move(shape), std::move(v), /*requires_grad=*/true);
}

}  // namespace

TEST_CASE("matmul forward matches hand expansion") {
    Tensor id = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor b = Tensor::from_data({2, 2}, {3, 4, 5, 6});
    CHECK(matmul(id, b).data() == std::vector<double>{3, 4, 5, 6});

    Tensor row = Tensor::from_data({1, 2}, {1, 2});
    Tensor col = Tensor::from_data({2, 1}, {3, 4});
    CHECK(matmul(row, col).item() == doctest::Approx(11.0).epsilon(1e-15));

    CHECK_THROWS_AS(matmul(row, row), std::invalid_argument);
}

TEST_CASE("matmul gradient of sum equals ones times transposed operand") {
    std::mt19937_64 rng(7);
    Tensor a = random_leaf({3, 4}, rng);
    Tensor b = random_leaf({4, 2}, rng);
    Tensor loss = sum(matmul(a, b));
    backward(loss);
    // d(sum)/dA = ones(3x2) . B^T
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t k = 0; k < 4; ++k) {
            double expect = 0.0;
            for (std::size_t j = 0; j < 2; ++j) expect += b.data()[k * 2 + j];
            CHECK(a.grad()[i * 4 + k] == doctest::Approx(expect).epsilon(1e-12));
        }
}

TEST_CASE("softmax rows are normalized, stable and shift invariant") {
    Tensor uniform = softmax(Tensor::from_data({5}, {0, 0, 0, 0, 0}));
    for (double v : uniform.data()) CHECK(v == doctest::Approx(0.2).epsilon(1e-14));

    Tensor large = softmax(Tensor::from_data({2}, {1000, 1000}));
    CHECK(large.data()[0] == doctest::Approx(0.5).epsilon(1e-14));

    Tensor analytic = softmax(Tensor::from_data({2}, {0.0, std::log(3.0)}));
    CHECK(analytic.data()[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(analytic.data()[1] == doctest::Approx(0.75).epsilon(1e-12));

    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> dist(-4.0, 4.0);
    for (int trial = 0; trial < 25; ++trial) {
        std::vector<double> row(6), shifted(6);
        const double c = dist(rng);
        for (std::size_t i = 0; i < row.size(); ++i) {
            row[i] = dist(rng);
            shifted[i] = row[i] + c;
        }
        Tensor p = softmax(Tensor::from_data({6}, row));
        Tensor q = softmax(Tensor::from_data({6}, shifted));
        double total = 0.0;
        for (std::size_t i = 0; i < row.size(); ++i) {
            total += p.data()[i];
            CHECK(std::abs(p.data()[i] - q.data()[i]) < 1e-12);
        }
        CHECK(std::abs(total - 1.0) < 1e-12);
    }
}

TEST_CASE("cross entropy analytic values") {
    Tensor zeros = Tensor::from_data({1, 5}, std::vector<double>(5, 0.0));
    const int gold0[1] = {0};
    CHECK(cross_entropy(zeros, std::span<const int>(gold0, 1)).item() ==
          doctest::Approx(std::log(5.0)).epsilon(1e-12));

    Tensor confident = Tensor::from_data({2}, {30.0, -30.0});
    CHECK(cross_entropy(confident, 0).item() < 1e-10);

    Tensor logits = Tensor::from_data({3}, {1.0, 2.0, 3.0});
    const double expect = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)) - 3.0;
    CHECK(cross_entropy(logits, 2).item() == doctest::Approx(expect).epsilon(1e-12));

    CHECK_THROWS_AS(cross_entropy(logits, 3), std::out_of_range);
    CHECK_THROWS_AS(cross_entropy(logits, -1), std::out_of_range);
}

TEST_CASE("embedding lookup gathers and scatter-adds") {
    Tensor table = Tensor::from_data({2, 2}, {1, 1, 2, 2}, true);
    const int ids[3] = {1, 0, 1};
    Tensor out = embedding_lookup(table, std::span<const int>(ids, 3));
    CHECK(out.data() == std::vector<double>{2, 2, 1, 1, 2, 2});

    Tensor empty = embedding_lookup(table, std::span<const int>{});
    CHECK(empty.shape() == std::vector<std::size_t>{0, 2});

    const int bad[1] = {2};
    CHECK_THROWS_AS(embedding_lookup(table, std::span<const int>(bad, 1)), std::out_of_range);

    // sum over lookup of [0, 0] puts 2.0 into each element of row 0
    table.zero_grad();
    const int twice[2] = {0, 0};
    backward(sum(embedding_lookup(table, std::span<const int>(twice, 2))));
    CHECK(table.grad() == std::vector<double>{2, 2, 0, 0});
}

TEST_CASE("elementwise basics") {
    CHECK(sigmoid(Tensor::scalar(0.0)).item() == doctest::Approx(0.5).epsilon(1e-15));
    Tensor m = mean_axis(Tensor::from_data({2, 2}, {1, 3, 5, 7}), 0);
    CHECK(m.data() == std::vector<double>{3, 5});
    Tensor t = Tensor::scalar(0.0, true);
    backward(tanh(t));
    CHECK(t.grad()[0] == doctest::Approx(1.0).epsilon(1e-15));

    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    CHECK_THROWS_AS(add(a, Tensor::from_data({3}, {1, 2, 3})), std::invalid_argument);
    CHECK(add(a, Tensor::from_data({2}, {10, 20})).data() ==
          std::vector<double>{11, 22, 13, 24});
}

TEST_CASE("backward on simple graphs") {
    Tensor p = Tensor::from_data({2, 2}, {1, 2, 3, 4}, true);
    backward(sum(p));
    CHECK(p.grad() == std::vector<double>(4, 1.0));

    Tensor q = Tensor::from_data({2}, {1, 2}, true);
    backward(sum(mul(q, q)));
    CHECK(q.grad() == std::vector<double>{2, 4});

    CHECK_THROWS_AS(backward(Tensor::from_data({2}, {1, 2}, true)), std::invalid_argument);
}

TEST_CASE("grad accumulates across backward calls until zeroed") {
    Tensor p = Tensor::from_data({2}, {1.0, 2.0}, true);
    backward(sum(p));
    backward(sum(p));
    CHECK(p.grad() == std::vector<double>{2, 2});
    p.zero_grad();
    backward(sum(p));
    CHECK(p.grad() == std::vector<double>{1, 1});
}

TEST_CASE("no-grad guard suppresses graph recording") {
    Tensor p = Tensor::from_data({2}, {1.0, 2.0}, true);
    NoGradGuard guard;
    Tensor out = sum(mul(p, p));
    CHECK_FALSE(out.requires_grad());
}

TEST_CASE("finite differences agree for every op") {
    std::mt19937_64 rng(1234);
    const int instances = 20;

    auto check = [&](const char* name, auto&& builder, std::vector<Tensor> leaves) {
        auto fn = [&]() { return builder(leaves); };
        auto result = oracle::finite_difference_check(fn, leaves);
        INFO(name);
        CHECK(result.max_rel_err < 1e-4);
    };

    for (int t = 0; t < instances; ++t) {
        check("matmul", [](std::vector<Tensor>& l) { return sum(tanh(matmul(l[0], l[1]))); },
              {random_leaf({3, 4}, rng), random_leaf({4, 2}, rng)});
        check("matvec", [](std::vector<Tensor>& l) { return sum(sigmoid(matvec(l[0], l[1]))); },
              {random_leaf({3, 4}, rng), random_leaf({4}, rng)});
        check("dot", [](std::vector<Tensor>& l) { return tanh(dot(l[0], l[1])); },
              {random_leaf({5}, rng), random_leaf({5}, rng)});
        check("add_mul_scale",
              [](std::vector<Tensor>& l) { return sum(scale(mul(add(l[0], l[1]), l[0]), 0.7)); },
              {random_leaf({3, 3}, rng), random_leaf({3, 3}, rng)});
        check("row_broadcast",
              [](std::vector<Tensor>& l) { return sum(tanh(mul(add(l[0], l[1]), l[1]))); },
              {random_leaf({4, 3}, rng), random_leaf({3}, rng)});
        check("softmax",
              [](std::vector<Tensor>& l) { return sum(mul(softmax(l[0]), l[1])); },
              {random_leaf({3, 5}, rng), random_leaf({3, 5}, rng)});
        check("cross_entropy",
              [](std::vector<Tensor>& l) {
                  const int gold[3] = {2, 0, 4};
                  return cross_entropy(l[0], std::span<const int>(gold, 3));
              },
              {random_leaf({3, 5}, rng)});
        check("transpose_reshape",
              [](std::vector<Tensor>& l) {
                  return sum(tanh(reshape(transpose(l[0]), {2, 6})));
              },
              {random_leaf({4, 3}, rng)});
        check("mean_concat",
              [](std::vector<Tensor>& l) {
                  Tensor joined = concat(l[0], l[1], 0);
                  return dot(mean_axis(joined, 0), mean_axis(transpose(joined), 1));
              },
              {random_leaf({2, 3}, rng), random_leaf({3, 3}, rng)});
        check("concat_cols_stack",
              [](std::vector<Tensor>& l) {
                  Tensor stacked = stack_rows({mean_axis(l[0], 1), mean_axis(l[1], 1)});
                  return sum(tanh(concat_cols({stacked, stacked})));
              },
              {random_leaf({2, 3}, rng), random_leaf({2, 4}, rng)});
        check("mask_fill",
              [](std::vector<Tensor>& l) {
                  Tensor mask = Tensor::from_data({4}, {1, 0, 1, 1});
                  return sum(softmax(mask_fill(l[0], mask, -1e30)));
              },
              {random_leaf({4}, rng)});
        check("sigmoid_relu",
              [](std::vector<Tensor>& l) { return sum(sigmoid(relu(l[0]))); },
              {[&] {
                  // keep values away from the relu kink
                  Tensor t = random_leaf({3, 3}, rng);
                  for (auto& v : t.mutable_data())
                      if (std::abs(v) < 1e-2) v = v < 0 ? v - 0.1 : v + 0.1;
                  return t;
              }()});
        check("bce_with_logits",
              [](std::vector<Tensor>& l) {
                  const double targets[4] = {1, 0, 1, 0};
                  return bce_with_logits(l[0], std::span<const double>(targets, 4));
              },
              {random_leaf({4}, rng, 2.0)});
        check("embedding_lookup",
              [](std::vector<Tensor>& l) {
                  const int ids[4] = {0, 2, 1, 2};
                  return sum(tanh(embedding_lookup(l[0], std::span<const int>(ids, 4))));
              },
              {random_leaf({3, 4}, rng)});
    }
}

TEST_CASE("finite differences agree for a composed two-layer net") {
    std::mt19937_64 rng(99);
    for (int t = 0; t < 20; ++t) {
        std::vector<Tensor> leaves = {random_leaf({3, 4}, rng), random_leaf({4, 5}, rng),
                                      random_leaf({5}, rng), random_leaf({5, 2}, rng),
                                      random_leaf({2}, rng)};
        auto fn = [&]() {
            Tensor h = tanh(add(matmul(leaves[0], leaves[1]), leaves[2]));
            Tensor out = add(matmul(h, leaves[3]), leaves[4]);
            const int gold[3] = {0, 1, 0};
            return cross_entropy(out, std::span<const int>(gold, 3));
        };
        auto result = oracle::finite_difference_check(fn, leaves);
        CHECK(result.max_rel_err < 1e-4);
    }
}

TEST_CASE("dropout zero rate is the identity and keeps gradients exact") {
    std::mt19937_64 rng(5);
    Tensor a = random_leaf({3, 3}, rng);
    Tensor same = dropout(a, 0.0, rng);
    CHECK(same.data() == a.data());

    Tensor b = random_leaf({40}, rng);
    Tensor dropped = dropout(b, 0.5, rng);
    std::size_t zeros = 0;
    for (std::size_t i = 0; i < dropped.numel(); ++i) {
        if (dropped.data()[i] == 0.0) {
            ++zeros;
        } else {
            CHECK(dropped.data()[i] == doctest::Approx(b.data()[i] * 2.0).epsilon(1e-12));
        }
    }
    CHECK(zeros > 5);
    CHECK(zeros < 35);
}
