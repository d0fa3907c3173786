#pragma once

#include <functional>
#include <span>
#include <vector>

#include "mact/tape.hpp"

namespace mact::ops {

// Elementwise -----------------------------------------------------------------
DiffArray add(DiffArray a, DiffArray b);
DiffArray sub(DiffArray a, DiffArray b);
DiffArray mul(DiffArray a, DiffArray b);
DiffArray add_scalar(DiffArray a, double c);
DiffArray mul_scalar(DiffArray a, double c);
/// out = a + coeff * s with s a scalar node broadcast over a.
DiffArray add_scalar_node(DiffArray a, DiffArray s, double coeff = 1.0);
/// out = a * s with s a scalar node.
DiffArray mul_scalar_node(DiffArray a, DiffArray s);
DiffArray relu(DiffArray a);
DiffArray tanh(DiffArray a);
DiffArray sigmoid(DiffArray a);
DiffArray softplus(DiffArray a);
DiffArray exp(DiffArray a);
DiffArray log(DiffArray a);
/// Elementwise smooth-L1 of (a - b): 0.5 e^2 for |e| < 1, |e| - 0.5 otherwise.
DiffArray smooth_l1(DiffArray a, DiffArray b);
/// Multiplies by a constant elementwise (no gradient through the constant).
DiffArray mul_const(DiffArray a, std::vector<double> c);

// Linear algebra ----------------------------------------------------------------
DiffArray matmul(DiffArray a, DiffArray b);                   // [m x k] @ [k x n]
DiffArray bmm(DiffArray a, DiffArray b);                      // [g x m x k] @ [g x k x n]
DiffArray bmm_bt(DiffArray a, DiffArray b);                   // [g x m x k] @ [g x n x k]^T
/// y = x W + b over the last axis; leading axes are flattened.
DiffArray linear(DiffArray x, DiffArray w, DiffArray b);
DiffArray linear_nobias(DiffArray x, DiffArray w);
DiffArray dot(DiffArray a, DiffArray b);                      // [n] . [n] -> [1]

// Neural primitives -------------------------------------------------------------
/// Same-length 1-D cross-correlation with symmetric zero padding.
/// x: [g x L x c_in], kernel: [k x c_in x c_out] (k odd) -> [g x L x c_out].
DiffArray conv1d(DiffArray x, DiffArray kernel);

struct LstmWeights {
  DiffArray w_ih;  // [4H x in], gate order (input, forget, candidate, output)
  DiffArray w_hh;  // [4H x H]
  DiffArray bias;  // [4H]
};
/// One gated recurrence step; returns [g x 2H] laid out as [h' | c'].
DiffArray lstm_cell_packed(DiffArray x, DiffArray h, DiffArray c, const LstmWeights& w);
std::pair<DiffArray, DiffArray> lstm_cell(DiffArray x, DiffArray h, DiffArray c,
                                          const LstmWeights& w);
/// Runs the cell along axis 1 of xs [g x L x in] from zero state; returns all
/// hidden states [g x L x H].
DiffArray lstm_sequence(DiffArray xs, const LstmWeights& w);

/// Numerically stable softmax along `axis`. An optional validity mask (1 =
/// keep) of either full shape or of length shape[axis] zeroes masked
/// positions exactly; an all-masked slice is a degenerate-softmax error.
DiffArray softmax(DiffArray x, int axis, std::span<const std::uint8_t> mask = {});

/// Zero-mean unit-variance normalization over the last axis (eps = 1e-5),
/// then elementwise gain/shift.
DiffArray layer_norm(DiffArray x, DiffArray gain, DiffArray shift);

/// Renormalizes columns 2 and 3 of each 5-wide row onto the unit circle;
/// rows with near-zero norm emit (1, 0).
DiffArray renorm_heading(DiffArray a);

// Reductions ----------------------------------------------------------------
DiffArray sum_all(DiffArray a);
DiffArray mean_all(DiffArray a);
/// Mean over elements with mask 1; mask has the same flat size as a.
DiffArray masked_mean_all(DiffArray a, std::span<const std::uint8_t> mask);
DiffArray sum_axis1(DiffArray a);   // [A x B] -> [A]
DiffArray mean_axis0(DiffArray a);  // [A x rest] -> [rest]
DiffArray mean_axis1(DiffArray a);  // [A x B x rest] -> [A x rest]
/// Mean over axis-0 slices with mask 1; at least one slice must be valid.
DiffArray masked_mean_axis0(DiffArray a, std::span<const std::uint8_t> mask);
DiffArray logsumexp(DiffArray a);   // [n] -> [1]

// Structure -------------------------------------------------------------------
DiffArray reshape(DiffArray a, Shape shape);
DiffArray slice_last(DiffArray a, int start, int len);
DiffArray concat_last(const std::vector<DiffArray>& parts);
DiffArray slice_axis0(DiffArray a, int start, int len);
DiffArray slice_axis1(DiffArray a, int start, int len);  // rank >= 2
DiffArray concat_axis0(const std::vector<DiffArray>& parts);
DiffArray select_axis0(DiffArray a, int index);     // drops axis 0
DiffArray select_element(DiffArray a, int index);   // flat index -> [1]
DiffArray swap01(DiffArray a);                      // [A x B x rest] -> [B x A x rest]
DiffArray transpose12(DiffArray a);                 // [G x B x C] -> [G x C x B]
DiffArray broadcast0(DiffArray a, int reps);        // [rest] -> [reps x rest]
DiffArray tile_axis1(DiffArray a, int reps);        // [A x C] -> [A x reps x C]
/// Adds b (shape = a.shape[1:]) to every axis-0 slice of a.
DiffArray add_bcast0(DiffArray a, DiffArray b);
/// out[g, :] = a[g, indices[g], :] for a [G x L x C].
DiffArray gather_axis1(DiffArray a, std::vector<int> indices);
/// Prefix sum along axis 1 of [A x B x C].
DiffArray cumsum_axis1(DiffArray a);
/// Scales every axis-0 slice of a by the matching entry of s [G].
DiffArray mul_axis0_scalars(DiffArray a, DiffArray s);

// Constants -------------------------------------------------------------------
/// Sinusoidal positional encoding values: pe[t, 2i] = sin(t / 10000^(2i/d)),
/// pe[t, 2i+1] = cos of the same argument. d must be even.
std::vector<double> positional_embedding(int length, int dim);

// Verification ------------------------------------------------------------------
struct GradCheckInput {
  Shape shape;
  std::vector<double> values;
};

/// Rebuilds the scalar computation `build` on fresh double-precision tapes
/// and compares analytic gradients against central finite differences.
/// Returns max |analytic - numeric| / max(1, |numeric|) over all elements.
double grad_check(
    const std::function<DiffArray(Tape&, const std::vector<DiffArray>&)>& build,
    const std::vector<GradCheckInput>& inputs, double step = 1e-5);

}  // namespace mact::ops
