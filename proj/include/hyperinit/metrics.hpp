#pragma once

#include <algorithm>
#include <vector>

#include "hyperinit/errors.hpp"

namespace hyperinit {

// kappa = 1 - sum(w*O)/sum(w*E), w_ij = (i-j)^2/(G-1)^2, E from the outer
// product of the marginals scaled to n. Degenerate denominator (all mass on
// one grade pair) scores 1 for perfect agreement and 0 otherwise.
inline double quadratic_weighted_kappa(const std::vector<int>& pred, const std::vector<int>& truth,
                                       int num_grades) {
    if (pred.size() != truth.size())
        throw ValidationError("kappa: prediction and truth lengths differ");
    if (pred.empty()) throw ValidationError("kappa: empty input");
    if (num_grades < 2) throw ValidationError("kappa: need at least 2 grades");
    const size_t n = pred.size();
    std::vector<double> confusion(static_cast<size_t>(num_grades) * num_grades, 0.0);
    std::vector<double> pred_marginal(num_grades, 0.0), truth_marginal(num_grades, 0.0);
    for (size_t i = 0; i < n; ++i) {
        if (pred[i] < 0 || pred[i] >= num_grades || truth[i] < 0 || truth[i] >= num_grades)
            throw ValidationError("kappa: grade outside [0," + std::to_string(num_grades) + ")");
        confusion[static_cast<size_t>(pred[i]) * num_grades + truth[i]] += 1.0;
        pred_marginal[pred[i]] += 1.0;
        truth_marginal[truth[i]] += 1.0;
    }
    const double denom_scale = static_cast<double>(num_grades - 1) * (num_grades - 1);
    double num = 0.0, den = 0.0;
    for (int i = 0; i < num_grades; ++i)
        for (int j = 0; j < num_grades; ++j) {
            const double w = static_cast<double>(i - j) * (i - j) / denom_scale;
            num += w * confusion[static_cast<size_t>(i) * num_grades + j];
            den += w * pred_marginal[i] * truth_marginal[j] / static_cast<double>(n);
        }
    if (den == 0.0) return num == 0.0 ? 1.0 : 0.0;
    return 1.0 - num / den;
}

// Probability that a random positive outscores a random negative, ties
// counted half: rank (Mann-Whitney) formulation with midranks.
inline double auc(const std::vector<double>& score, const std::vector<int>& truth) {
    if (score.size() != truth.size()) throw ValidationError("auc: score and truth lengths differ");
    const size_t n = score.size();
    size_t n_pos = 0;
    for (int t : truth) {
        if (t != 0 && t != 1) throw ValidationError("auc: truth labels must be 0 or 1");
        n_pos += t;
    }
    if (n_pos == 0 || n_pos == n)
        throw ValidationError("auc: undefined for single-class truth (" + std::to_string(n_pos) + " of " +
                              std::to_string(n) + " positive)");
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return score[a] < score[b]; });
    std::vector<double> rank(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && score[order[j + 1]] == score[order[i]]) ++j;
        const double mid = 0.5 * (i + j) + 1.0;  // 1-based midrank
        for (size_t k = i; k <= j; ++k) rank[order[k]] = mid;
        i = j + 1;
    }
    double rank_sum_pos = 0.0;
    for (size_t k = 0; k < n; ++k)
        if (truth[k] == 1) rank_sum_pos += rank[k];
    const double n1 = static_cast<double>(n_pos), n0 = static_cast<double>(n - n_pos);
    return (rank_sum_pos - n1 * (n1 + 1) / 2.0) / (n1 * n0);
}

// 2|P∩T| / (|P|+|T|); both masks empty scores 1.
inline double dice(const std::vector<int>& pred, int ph, int pw, const std::vector<int>& truth, int th,
                   int tw) {
    if (ph != th || pw != tw)
        throw DimensionError("dice: mask shapes [" + std::to_string(ph) + "," + std::to_string(pw) + "] and [" +
                             std::to_string(th) + "," + std::to_string(tw) + "] differ");
    if (pred.size() != static_cast<size_t>(ph) * pw || truth.size() != static_cast<size_t>(th) * tw)
        throw DimensionError("dice: mask buffers do not match their shapes");
    long inter = 0, total = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const int p = pred[i] ? 1 : 0, t = truth[i] ? 1 : 0;
        inter += p & t;
        total += p + t;
    }
    if (total == 0) return 1.0;
    return 2.0 * inter / total;
}

}  // namespace hyperinit
