#pragma once

#include <span>

#include "campd/tensor.hpp"

namespace campd {

// Backward closures capture tensors copied from const references, so the
// copies are const members; tensors are shared handles, making this cast safe.
inline std::span<double> grad_of(const Tensor& t) {
  return const_cast<Tensor&>(t).grad();
}

}  // namespace campd
