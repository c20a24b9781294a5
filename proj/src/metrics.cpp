// SPDX-License-Identifier: Apache-2.0

#include "ptum/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace ptum {

double accuracy(std::span<const int> preds, std::span<const int> gold) {
    if (preds.empty() || preds.size() != gold.size())
        throw std::invalid_argument("accuracy: empty or mismatched inputs");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == gold[i];
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double macro_f(std::span<const int> preds, std::span<const int> gold, int n_classes) {
    if (preds.empty() || preds.size() != gold.size())
        throw std::invalid_argument("macro_f: empty or mismatched inputs");
    if (n_classes < 1) throw std::invalid_argument("macro_f: n_classes must be positive");
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i] < 0 || preds[i] >= n_classes || gold[i] < 0 || gold[i] >= n_classes)
            throw std::out_of_range("macro_f: label outside [0, n_classes)");
    std::vector<std::size_t> tp(n_classes, 0), fp(n_classes, 0), fn(n_classes, 0);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] == gold[i]) {
            ++tp[gold[i]];
        } else {
            ++fp[preds[i]];
            ++fn[gold[i]];
        }
    }
    double f_sum = 0.0;
    int classes_in_gold = 0;
    for (int c = 0; c < n_classes; ++c) {
        if (tp[c] + fn[c] == 0) continue;  // class absent from gold: excluded
        ++classes_in_gold;
        const double denom = static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
        if (denom > 0.0) f_sum += 2.0 * static_cast<double>(tp[c]) / denom;
    }
    return f_sum / static_cast<double>(classes_in_gold);
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.empty() || scores.size() != labels.size())
        throw std::invalid_argument("roc_auc: empty or mismatched inputs");
    std::size_t n_pos = 0, n_neg = 0;
    for (int y : labels) {
        if (y != 0 && y != 1) throw std::invalid_argument("roc_auc: labels must be 0/1");
        y ? ++n_pos : ++n_neg;
    }
    if (n_pos == 0 || n_neg == 0)
        throw std::invalid_argument("roc_auc: needs both classes present");

    // Rank-sum with average ranks over tie groups.
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double pos_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based (i+1 .. j)
        for (std::size_t k = i; k < j; ++k)
            if (labels[idx[k]] == 1) pos_rank_sum += avg_rank;
        i = j;
    }
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double average_precision(std::span<const double> scores, std::span<const int> labels) {
    if (scores.empty() || scores.size() != labels.size())
        throw std::invalid_argument("average_precision: empty or mismatched inputs");
    std::size_t n_pos = 0;
    for (int y : labels) {
        if (y != 0 && y != 1) throw std::invalid_argument("average_precision: labels must be 0/1");
        n_pos += y;
    }
    if (n_pos == 0) throw std::invalid_argument("average_precision: no positives");

    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    double ap = 0.0;
    std::size_t hits = 0;
    for (std::size_t rank = 0; rank < idx.size(); ++rank) {
        if (labels[idx[rank]] == 1) {
            ++hits;
            ap += static_cast<double>(hits) / static_cast<double>(rank + 1);
        }
    }
    return ap / static_cast<double>(n_pos);
}

}  // namespace ptum
