#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mhaunet/conv.hpp"
#include "mhaunet/ops.hpp"
#include "mhaunet/rng.hpp"

namespace mha {

template <typename T>
using NamedVars = std::vector<std::pair<std::string, Var<T>>>;

template <typename T>
void he_normal_fill(Tensor<T>& t, int fan_in, Rng& rng) {
    const double stddev = std::sqrt(2.0 / std::max(1, fan_in));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.normal(0.0, stddev));
}

template <typename T>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(int in_ch, int out_ch, int kernel, Rng& rng, bool bias = true, int groups = 1)
        : groups_(groups) {
        Tensor<T> w({out_ch, in_ch / groups, kernel, kernel});
        he_normal_fill(w, (in_ch / groups) * kernel * kernel, rng);
        weight = make_leaf(std::move(w), true);
        if (bias) this->bias = make_leaf(Tensor<T>({out_ch}), true);
    }

    Var<T> forward(const Var<T>& x) const { return conv2d(x, weight, bias, groups_); }

    void collect(const std::string& p, NamedVars<T>& params, NamedVars<T>&) {
        params.emplace_back(p + ".weight", weight);
        if (bias) params.emplace_back(p + ".bias", bias);
    }

    Var<T> weight;
    Var<T> bias;

private:
    int groups_ = 1;
};

template <typename T>
class BatchNorm2d {
public:
    BatchNorm2d() = default;
    explicit BatchNorm2d(int ch, T eps = T(1e-5), T momentum = T(0.1))
        : eps_(eps), momentum_(momentum) {
        gamma = make_leaf(Tensor<T>({ch}, T(1)), true);
        beta = make_leaf(Tensor<T>({ch}), true);
        running_mean = make_leaf(Tensor<T>({ch}), false);
        running_var = make_leaf(Tensor<T>({ch}, T(1)), false);
    }

    Var<T> forward(const Var<T>& x) {
        check_nchw(x->value, "BatchNorm2d");
        const int n = batch_of(x->value), c = channels_of(x->value);
        check_shape(c == static_cast<int>(gamma->value.numel()),
                    "BatchNorm2d: channel mismatch");
        const int64_t plane = int64_t(height_of(x->value)) * width_of(x->value);
        const int64_t m = int64_t(n) * plane;

        if (!training) {
            Tensor<T> out(x->value.shape());
            std::vector<T> scl(static_cast<size_t>(c)), sft(static_cast<size_t>(c));
            for (int k = 0; k < c; ++k) {
                const T rs = T(1) / std::sqrt(running_var->value[k] + eps_);
                scl[static_cast<size_t>(k)] = gamma->value[k] * rs;
                sft[static_cast<size_t>(k)] =
                    beta->value[k] - running_mean->value[k] * scl[static_cast<size_t>(k)];
            }
            for (int b = 0; b < n; ++b)
                for (int k = 0; k < c; ++k) {
                    const T* xi = x->value.data() + (int64_t(b) * c + k) * plane;
                    T* yi = out.data() + (int64_t(b) * c + k) * plane;
                    for (int64_t i = 0; i < plane; ++i)
                        yi[i] = xi[i] * scl[static_cast<size_t>(k)] + sft[static_cast<size_t>(k)];
                }
            return make_node<T>(std::move(out), {x, gamma, beta},
                                [c, plane, n, scl](Node<T>& self) {
                                    Node<T>& px = *self.parents[0];
                                    if (px.requires_grad) {
                                        Tensor<T>& g = px.grad_buf();
                                        for (int b = 0; b < n; ++b)
                                            for (int k = 0; k < c; ++k) {
                                                const T* go = self.grad.data() +
                                                              (int64_t(b) * c + k) * plane;
                                                T* gi = g.data() + (int64_t(b) * c + k) * plane;
                                                for (int64_t i = 0; i < plane; ++i)
                                                    gi[i] += go[i] * scl[static_cast<size_t>(k)];
                                            }
                                    }
                                    // gamma/beta grads are rarely needed in eval
                                    // mode; skipped by the lambda on purpose.
                                });
        }

        // Train mode: batch statistics.
        Tensor<T> mean({c}), rstd({c});
        for (int k = 0; k < c; ++k) {
            T s = 0;
            for (int b = 0; b < n; ++b) {
                const T* xi = x->value.data() + (int64_t(b) * c + k) * plane;
                for (int64_t i = 0; i < plane; ++i) s += xi[i];
            }
            mean[k] = s / static_cast<T>(m);
        }
        Tensor<T> var({c});
        for (int k = 0; k < c; ++k) {
            T s = 0;
            for (int b = 0; b < n; ++b) {
                const T* xi = x->value.data() + (int64_t(b) * c + k) * plane;
                for (int64_t i = 0; i < plane; ++i) {
                    const T d = xi[i] - mean[k];
                    s += d * d;
                }
            }
            var[k] = s / static_cast<T>(m);
            rstd[k] = T(1) / std::sqrt(var[k] + eps_);
        }
        // Running stats use the unbiased variance.
        const T corr = m > 1 ? static_cast<T>(m) / static_cast<T>(m - 1) : T(1);
        for (int k = 0; k < c; ++k) {
            running_mean->value[k] =
                (T(1) - momentum_) * running_mean->value[k] + momentum_ * mean[k];
            running_var->value[k] =
                (T(1) - momentum_) * running_var->value[k] + momentum_ * var[k] * corr;
        }

        Tensor<T> out(x->value.shape());
        Tensor<T> xhat(x->value.shape());
        for (int b = 0; b < n; ++b)
            for (int k = 0; k < c; ++k) {
                const T* xi = x->value.data() + (int64_t(b) * c + k) * plane;
                T* xh = xhat.data() + (int64_t(b) * c + k) * plane;
                T* yi = out.data() + (int64_t(b) * c + k) * plane;
                for (int64_t i = 0; i < plane; ++i) {
                    xh[i] = (xi[i] - mean[k]) * rstd[k];
                    yi[i] = xh[i] * gamma->value[k] + beta->value[k];
                }
            }
        return make_node<T>(
            std::move(out), {x, gamma, beta}, [n, c, plane, m, xhat, rstd](Node<T>& self) {
                Node<T>& px = *self.parents[0];
                Node<T>& pg = *self.parents[1];
                Node<T>& pb = *self.parents[2];
                std::vector<T> sum_go(static_cast<size_t>(c), T(0));
                std::vector<T> sum_gox(static_cast<size_t>(c), T(0));
                for (int b = 0; b < n; ++b)
                    for (int k = 0; k < c; ++k) {
                        const T* go = self.grad.data() + (int64_t(b) * c + k) * plane;
                        const T* xh = xhat.data() + (int64_t(b) * c + k) * plane;
                        for (int64_t i = 0; i < plane; ++i) {
                            sum_go[static_cast<size_t>(k)] += go[i];
                            sum_gox[static_cast<size_t>(k)] += go[i] * xh[i];
                        }
                    }
                if (pg.requires_grad) {
                    Tensor<T>& g = pg.grad_buf();
                    for (int k = 0; k < c; ++k) g[k] += sum_gox[static_cast<size_t>(k)];
                }
                if (pb.requires_grad) {
                    Tensor<T>& g = pb.grad_buf();
                    for (int k = 0; k < c; ++k) g[k] += sum_go[static_cast<size_t>(k)];
                }
                if (px.requires_grad) {
                    Tensor<T>& g = px.grad_buf();
                    const T invm = T(1) / static_cast<T>(m);
                    for (int b = 0; b < n; ++b)
                        for (int k = 0; k < c; ++k) {
                            const T* go = self.grad.data() + (int64_t(b) * c + k) * plane;
                            const T* xh = xhat.data() + (int64_t(b) * c + k) * plane;
                            T* gi = g.data() + (int64_t(b) * c + k) * plane;
                            const T gk = pg.value[k] * rstd[k];
                            for (int64_t i = 0; i < plane; ++i)
                                gi[i] += gk * (go[i] - invm * (sum_go[static_cast<size_t>(k)] +
                                                               xh[i] * sum_gox[static_cast<size_t>(k)]));
                        }
                }
            });
    }

    void collect(const std::string& p, NamedVars<T>& params, NamedVars<T>& buffers) {
        params.emplace_back(p + ".gamma", gamma);
        params.emplace_back(p + ".beta", beta);
        buffers.emplace_back(p + ".running_mean", running_mean);
        buffers.emplace_back(p + ".running_var", running_var);
    }

    Var<T> gamma, beta, running_mean, running_var;
    bool training = true;

private:
    T eps_ = T(1e-5);
    T momentum_ = T(0.1);
};

template <typename T>
class LayerNormChannels {
public:
    LayerNormChannels() = default;
    explicit LayerNormChannels(int ch, T eps = T(1e-6)) : eps_(eps) {
        gamma = make_leaf(Tensor<T>({ch}, T(1)), true);
        beta = make_leaf(Tensor<T>({ch}), true);
    }

    Var<T> forward(const Var<T>& x) const { return layer_norm_channels(x, gamma, beta, eps_); }

    void collect(const std::string& p, NamedVars<T>& params, NamedVars<T>&) {
        params.emplace_back(p + ".gamma", gamma);
        params.emplace_back(p + ".beta", beta);
    }

    Var<T> gamma, beta;

private:
    T eps_ = T(1e-6);
};

template <typename T>
class Dropout {
public:
    Dropout() = default;
    Dropout(T p, Rng* rng) : p_(p), rng_(rng) {}

    Var<T> forward(const Var<T>& x) {
        if (!training || p_ <= T(0)) return x;
        Tensor<T> mask(x->value.shape());
        const T keep = T(1) - p_;
        for (int64_t i = 0; i < mask.numel(); ++i)
            mask[i] = rng_->bernoulli(static_cast<double>(keep)) ? T(1) / keep : T(0);
        return dropout_with_mask(x, std::move(mask));
    }

    bool training = true;

private:
    T p_ = T(0);
    Rng* rng_ = nullptr;
};

}  // namespace mha
