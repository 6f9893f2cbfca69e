// SPDX-License-Identifier: Apache-2.0
#include "fuselave/il_rope.hpp"

#include <cmath>

#include "fuselave/common.hpp"

namespace fuselave {

FrequencyAllocation allocate_frequencies(const RopeConfig& config) {
    const int d = config.head_dim;
    check(d > 0 && d % 2 == 0, "rope: head_dim must be positive and even");
    const int pairs = d / 2;

    FrequencyAllocation alloc;
    alloc.head_dim = d;
    alloc.axis.resize(pairs);
    alloc.theta.resize(pairs);
    for (int i = 0; i < pairs; ++i) {
        alloc.theta[i] = std::pow(config.base, -2.0 * i / d);
    }

    if (config.scheme == RopeScheme::ILRoPE) {
        // Round-robin T,H,W over the leading 3*floor(pairs*3/4/3) pairs,
        // remainder to T. At d=128 this is pairs [0,48) interleaved and
        // [48,64) on T.
        const int rr = 3 * ((pairs * 3 / 4) / 3);
        for (int i = 0; i < pairs; ++i) {
            alloc.axis[i] = (i < rr) ? static_cast<RopeAxis>(i % 3) : RopeAxis::T;
        }
    } else {
        // Contiguous bands, pair ratio 16:24:24 out of 64.
        const int n_t = pairs * 16 / 64;
        const int n_h = pairs * 24 / 64;
        for (int i = 0; i < pairs; ++i) {
            alloc.axis[i] = (i < n_t) ? RopeAxis::T : (i < n_t + n_h) ? RopeAxis::H : RopeAxis::W;
        }
    }
    return alloc;
}

void rope_angles(const std::array<long, 3>& pos, const FrequencyAllocation& alloc,
                 double* cos_out, double* sin_out) {
    const int pairs = alloc.head_dim / 2;
    for (int i = 0; i < pairs; ++i) {
        const double angle = static_cast<double>(pos[static_cast<int>(alloc.axis[i])]) * alloc.theta[i];
        cos_out[i] = std::cos(angle);
        sin_out[i] = std::sin(angle);
    }
}

std::vector<double> apply_rope(const std::vector<double>& vec,
                               const std::array<long, 3>& pos,
                               const FrequencyAllocation& alloc) {
    check(static_cast<int>(vec.size()) == alloc.head_dim, "rope: vector length != head_dim");
    check(pos[0] >= 0 && pos[1] >= 0 && pos[2] >= 0, "rope: negative position component");
    const int pairs = alloc.head_dim / 2;
    std::vector<double> cos_tab(pairs), sin_tab(pairs);
    rope_angles(pos, alloc, cos_tab.data(), sin_tab.data());
    std::vector<double> out(vec);
    rope_rotate_inplace(out.data(), 1, alloc.head_dim, cos_tab.data(), sin_tab.data());
    return out;
}

void rope_rotate_inplace(double* vecs, int n, int head_dim, const double* cos_tab,
                         const double* sin_tab) {
    const int pairs = head_dim / 2;
    for (int v = 0; v < n; ++v) {
        double* x = vecs + static_cast<size_t>(v) * head_dim;
        for (int i = 0; i < pairs; ++i) {
            const double a = x[2 * i], b = x[2 * i + 1];
            x[2 * i] = a * cos_tab[i] - b * sin_tab[i];
            x[2 * i + 1] = a * sin_tab[i] + b * cos_tab[i];
        }
    }
}

void rope_rotate_inverse_inplace(double* vecs, int n, int head_dim,
                                 const double* cos_tab, const double* sin_tab) {
    const int pairs = head_dim / 2;
    for (int v = 0; v < n; ++v) {
        double* x = vecs + static_cast<size_t>(v) * head_dim;
        for (int i = 0; i < pairs; ++i) {
            const double a = x[2 * i], b = x[2 * i + 1];
            x[2 * i] = a * cos_tab[i] + b * sin_tab[i];
            x[2 * i + 1] = -a * sin_tab[i] + b * cos_tab[i];
        }
    }
}

}  // namespace fuselave
