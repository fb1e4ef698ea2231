#pragma once

// Text form of kernel expressions, e.g. "sum(matern52, pow(dot(c=1), 2))".
//
//   call  := NAME [ "(" [ arg { "," arg } ] ")" ]
//   arg   := call | value | NAME "=" value
//   value := NUMBER | "[" [ value { "," value } ] "]"
//
// Leaves: rbf, matern52, expdot, nn, rbfnet, rq(alpha), poly(degree, c),
// dot(c), cosine(w=[…]), qmix(c), sm(w=[…], l=[…], mu=[[…], …]).
// Combinators: sum(k, …), prod(k, …), dsum(k, …), dprod(k, …), scale(k, a),
// pow(k, p), exp(k), ard(k, l=[…]), lwarp(k, U=[[row], …]).

#include <string_view>

#include "gradkernel/kernel.hpp"

namespace gradkernel {

/// Throws ParseError with the byte offset of the offending token.
KernelExpr parse_kernel(std::string_view text);

}  // namespace gradkernel
