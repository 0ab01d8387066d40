#pragma once

#include "arl/numerics.hpp"

namespace arl {

/// Copies rows [start, end) of a [V x d] output head into a new
/// [(end - start) x d] head. Throws DomainError for empty or out-of-range slices.
Tensor slim_vocabulary(const Tensor& full_head, int start, int end);

}  // namespace arl
