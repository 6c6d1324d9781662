#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "swarmpipe/tensor.hpp"

namespace swarmpipe {

constexpr std::size_t kQuantBlockSize = 64;

/// Blockwise absmax int8 encoding of a row-major activation matrix. Blocks
/// run over the flattened data; the last block may be short.
struct QuantizedHidden {
  std::size_t block_size = kQuantBlockSize;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t position_offset = 0;
  std::vector<float> scales;       // absmax / 127 per block
  std::vector<std::int8_t> codes;  // one per element

  // Bytes of scales + codes (excluding the shape header).
  std::size_t data_bytes() const noexcept { return scales.size() * 4 + codes.size(); }
};

QuantizedHidden quantize_hidden(const HiddenStates& h, std::size_t block_size = kQuantBlockSize);
HiddenStates dequantize_hidden(const QuantizedHidden& q);

}  // namespace swarmpipe
