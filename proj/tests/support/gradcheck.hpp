#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mhaunet/autograd.hpp"
#include "mhaunet/rng.hpp"

namespace testsup {

struct GradCheckReport {
    double max_rel_err = 0.0;    // over entries with non-negligible gradient
    double max_abs_err = 0.0;    // over near-zero-gradient entries
    int64_t entries = 0;
    std::string worst;
    bool ok(double rtol, double atol = 1e-7) const {
        return max_rel_err <= rtol && max_abs_err <= atol;
    }
};

// Central finite differences against reverse-mode gradients. `loss_fn` must
// rebuild the graph from the current leaf values on every call. Set
// `sample_per_tensor` > 0 to check a random subset of entries per tensor
// instead of every entry.
inline GradCheckReport grad_check(const std::function<mha::Var<double>()>& loss_fn,
                                  const std::vector<std::pair<std::string, mha::Var<double>>>& leaves,
                                  double eps = 1e-4, int sample_per_tensor = -1,
                                  uint64_t sample_seed = 7) {
    using mha::Var;
    GradCheckReport rep;

    Var<double> loss = loss_fn();
    mha::backward(loss);

    std::vector<mha::Tensor<double>> analytic;
    analytic.reserve(leaves.size());
    for (const auto& [name, leaf] : leaves)
        analytic.push_back(leaf->grad.defined() ? leaf->grad
                                                : mha::Tensor<double>(leaf->value.shape()));

    mha::Rng rng(sample_seed);
    for (size_t li = 0; li < leaves.size(); ++li) {
        auto& leaf = leaves[li].second;
        const int64_t n = leaf->value.numel();
        std::vector<int64_t> idxs;
        if (sample_per_tensor > 0 && n > sample_per_tensor) {
            for (int k = 0; k < sample_per_tensor; ++k)
                idxs.push_back(rng.uniform_int(0, static_cast<int>(n - 1)));
        } else {
            idxs.resize(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) idxs[static_cast<size_t>(i)] = i;
        }
        for (int64_t i : idxs) {
            const double orig = leaf->value[i];
            double lp, lm;
            {
                mha::NoGradGuard ng;
                leaf->value[i] = orig + eps;
                lp = loss_fn()->value[0];
                leaf->value[i] = orig - eps;
                lm = loss_fn()->value[0];
                leaf->value[i] = orig;
            }
            const double fd = (lp - lm) / (2.0 * eps);
            const double an = analytic[li][i];
            const double err = std::abs(fd - an);
            const double denom = std::max(std::abs(fd), std::abs(an));
            ++rep.entries;
            if (denom > 1e-6) {
                const double rel = err / denom;
                if (rel > rep.max_rel_err) {
                    rep.max_rel_err = rel;
                    rep.worst = leaves[li].first + "[" + std::to_string(i) + "] fd=" +
                                std::to_string(fd) + " an=" + std::to_string(an);
                }
            } else if (err > rep.max_abs_err) {
                rep.max_abs_err = err;
            }
        }
    }
    return rep;
}

}  // namespace testsup
