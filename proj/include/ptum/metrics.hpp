// SPDX-License-Identifier: Apache-2.0
//
// Exact classification and ranking metrics. AUC uses the rank-sum
// (Mann-Whitney) formulation with ties credited 0.5; AP is
// non-interpolated with ties broken by stable descending-score order.

#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>

namespace ptum {

struct MetricsReport {
    std::map<std::string, double> metrics;
    std::size_t n_examples = 0;
    std::map<int, std::size_t> class_support;  // gold label -> count
};

double accuracy(std::span<const int> preds, std::span<const int> gold);

// Unweighted mean of per-class F1 over classes that appear in gold; a gold
// class never predicted correctly contributes F = 0.
double macro_f(std::span<const int> preds, std::span<const int> gold, int n_classes);

// Probability a random positive outscores a random negative. Requires both
// classes present.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

// Sum of precision@rank over positive hits divided by the positive count.
// Requires at least one positive.
double average_precision(std::span<const double> scores, std::span<const int> labels);

}  // namespace ptum
