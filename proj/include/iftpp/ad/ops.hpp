#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "iftpp/ad/tape.hpp"

// Differentiable operations over tape variables.
//
// Broadcasting is limited to: scalar (rank 0) with any tensor, and a rank-1
// vector of length m against a rank-2 [n x m] matrix (the vector is applied
// to every row).  Column-wise broadcasting is spelled out with repeat_cols().

namespace iftpp::ad {

// Elementwise arithmetic.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var add(const Var& a, double b);
Var mul(const Var& a, double b);
Var neg(const Var& a);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator+(const Var& a, double b) { return add(a, b); }
inline Var operator+(double a, const Var& b) { return add(b, a); }
inline Var operator-(const Var& a, double b) { return add(a, -b); }
inline Var operator-(double a, const Var& b) { return add(neg(b), a); }
inline Var operator*(const Var& a, double b) { return mul(a, b); }
inline Var operator*(double a, const Var& b) { return mul(b, a); }
inline Var operator-(const Var& a) { return neg(a); }

// Elementwise functions.
Var exp(const Var& a);
Var log(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var softplus(const Var& a);
/// log(sigmoid(a)) without underflow.
Var log_sigmoid(const Var& a);
Var square(const Var& a);
Var pow(const Var& a, double exponent);
/// Clamps values; the gradient is zero where the bound is active.
Var clamp(const Var& a, double lo, double hi);

// Reductions.  Row-wise ops act on each row of a matrix, or on the whole of a
// rank-1 vector.
Var sum(const Var& a);
Var mean(const Var& a);
Var sum_rows(const Var& a);
Var logsumexp(const Var& a);
Var softmax(const Var& a);
Var log_softmax(const Var& a);

/// [n x k] * [k x m] -> [n x m], or [n x k] * [k] -> [n].
Var matmul(const Var& a, const Var& b);

// Structural ops.
/// axis 0 stacks rows (rank-1 inputs are joined end to end); axis 1 joins
/// matrices with equal row counts side by side.
Var concat(const std::vector<Var>& parts, std::size_t axis);
/// Rows of a [V x E] table, one per index -> [n x E].
Var gather_rows(const Var& table, std::span<const std::size_t> indices);
/// Picks a(i, indices[i]) from each row of an [n x m] matrix -> [n].
Var gather_cols(const Var& a, std::span<const std::size_t> indices);
/// Columns [begin, end) of a matrix.
Var slice_cols(const Var& a, std::size_t begin, std::size_t end);
/// Column j of a matrix as a rank-1 vector.
Var column(const Var& a, std::size_t j);
/// [n] -> [n x m], each entry repeated across its row.
Var repeat_cols(const Var& v, std::size_t m);
Var reshape(const Var& a, Shape shape);
Var transpose(const Var& a);

/// Forward value is `hard`; the gradient flows into `soft` unchanged.
Var straight_through(const Tensor& hard, const Var& soft);
Var stop_gradient(const Var& a);

/// Gated recurrent cell with update/reset gates (fused, hand-written
/// backward).  Gate blocks within the 3H columns are ordered reset, update,
/// candidate.
///   x [B x I], h [B x H], w_input [I x 3H], w_hidden [H x 3H],
///   b_input [3H], b_hidden [3H]  ->  h' [B x H]
Var gru_cell(const Var& x, const Var& h, const Var& w_input, const Var& w_hidden,
             const Var& b_input, const Var& b_hidden);

}  // namespace iftpp::ad
