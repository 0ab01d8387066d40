#include "arl/vocab.hpp"

#include <algorithm>
#include <string>

namespace arl {

Tensor slim_vocabulary(const Tensor& full_head, int start, int end) {
    const auto rows = static_cast<int>(full_head.rows);
    if (start < 0 || start >= end || end > rows) {
        throw DomainError("slim_vocabulary: range [" + std::to_string(start) + ", " + std::to_string(end) +
                          ") invalid for a head with " + std::to_string(rows) + " rows");
    }
    Tensor out(static_cast<std::size_t>(end - start), full_head.cols);
    std::copy(full_head.data.begin() + static_cast<std::ptrdiff_t>(start * full_head.cols),
              full_head.data.begin() + static_cast<std::ptrdiff_t>(end * full_head.cols), out.data.begin());
    return out;
}

}  // namespace arl
