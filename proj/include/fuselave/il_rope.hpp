// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <vector>

namespace fuselave {

enum class RopeScheme { ILRoPE, MRoPE };

enum class RopeAxis : int { T = 0, H = 1, W = 2 };

struct RopeConfig {
    int head_dim = 128;        // must be even; 3D allocation wants d % 4 == 0
    double base = 10000.0;
    RopeScheme scheme = RopeScheme::ILRoPE;
};

// Per rotation pair i in [0, d/2): which position axis drives it and the
// angle base theta_i = base^(-2i/d). theta is strictly decreasing in i.
struct FrequencyAllocation {
    int head_dim = 0;
    std::vector<RopeAxis> axis;   // size d/2
    std::vector<double> theta;    // size d/2
};

// ILRoPE: pairs below the round-robin cutoff cycle T,H,W; the rest go to T.
// For d=128 the cutoff is pair 48 and the tables match the reference layout
// exactly. MRoPE: contiguous bands in pair ratio 16:24:24.
FrequencyAllocation allocate_frequencies(const RopeConfig& config);

// Rotates each (2i, 2i+1) pair of `vec` by pos[axis(i)] * theta_i.
// Adjacent-pair layout. Norm preserving.
std::vector<double> apply_rope(const std::vector<double>& vec,
                               const std::array<long, 3>& pos,
                               const FrequencyAllocation& alloc);

// cos/sin table for one position, laid out [d/2] each; used by the fused
// attention path so angles are computed once per token.
void rope_angles(const std::array<long, 3>& pos, const FrequencyAllocation& alloc,
                 double* cos_out, double* sin_out);

// Rotate `n` packed head vectors in place given a precomputed table.
void rope_rotate_inplace(double* vecs, int n, int head_dim, const double* cos_tab,
                         const double* sin_tab);

// Inverse rotation (used by the backward pass).
void rope_rotate_inverse_inplace(double* vecs, int n, int head_dim,
                                 const double* cos_tab, const double* sin_tab);

}  // namespace fuselave
