// Central finite-difference gradient verification. Intended to run with
// T = double; single precision does not leave enough headroom below the
// 1e-3 acceptance tolerance on deep graphs.
#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "shiftlab/autograd.hpp"
#include "shiftlab/rng.hpp"

namespace shiftlab {

template <typename T>
using ScalarFn = std::function<NodePtr<T>(const NodePtr<T>&)>;

// Max over checked coordinates of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
// With max_coords > 0 a deterministic random subset of coordinates is checked
// (full sweeps over large parameter tensors are quadratic and not practical);
// max_coords == 0 checks every coordinate.
template <typename T>
double grad_check(const ScalarFn<T>& f, const Tensor<T>& x, double eps, std::int64_t max_coords = 0,
                  std::uint64_t coord_seed = 0x5eed) {
    auto leaf = make_leaf(x);
    auto loss = f(leaf);
    if (loss->value.numel() != 1) throw shape_error("grad_check requires a scalar-valued function");
    backward(loss);
    Tensor<T> analytic = leaf->grad.empty() ? Tensor<T>::zeros(x.shape()) : leaf->grad;

    std::vector<std::int64_t> coords;
    const std::int64_t total = x.numel();
    if (max_coords <= 0 || max_coords >= total) {
        coords.resize(static_cast<std::size_t>(total));
        for (std::int64_t i = 0; i < total; ++i) coords[static_cast<std::size_t>(i)] = i;
    } else {
        Rng rng(coord_seed);
        std::vector<std::int64_t> all(static_cast<std::size_t>(total));
        for (std::int64_t i = 0; i < total; ++i) all[static_cast<std::size_t>(i)] = i;
        rng.shuffle(all);
        coords.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(max_coords));
    }

    double worst = 0.0;
    Tensor<T> probe = x;
    for (std::int64_t ci : coords) {
        const T saved = probe[ci];
        probe[ci] = saved + static_cast<T>(eps);
        const double up = static_cast<double>(f(make_leaf(probe))->value[0]);
        probe[ci] = saved - static_cast<T>(eps);
        const double down = static_cast<double>(f(make_leaf(probe))->value[0]);
        probe[ci] = saved;
        const double numeric = (up - down) / (2.0 * eps);
        const double a = static_cast<double>(analytic[ci]);
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
        worst = std::max(worst, std::abs(a - numeric) / denom);
    }
    return worst;
}

}  // namespace shiftlab
