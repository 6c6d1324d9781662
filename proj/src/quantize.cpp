#include "swarmpipe/quantize.hpp"

#include <algorithm>
#include <cmath>

#include "swarmpipe/errors.hpp"

namespace swarmpipe {

QuantizedHidden quantize_hidden(const HiddenStates& h, std::size_t block_size) {
  if (block_size == 0) throw ConfigError("quantization block size must be positive");
  QuantizedHidden q;
  q.block_size = block_size;
  q.rows = h.values.rows();
  q.cols = h.values.cols();
  q.position_offset = h.position_offset;
  const auto data = h.values.data();
  q.codes.resize(data.size());
  const std::size_t n_blocks = (data.size() + block_size - 1) / block_size;
  q.scales.resize(n_blocks);
  for (std::size_t b = 0; b < n_blocks; ++b) {
    const std::size_t begin = b * block_size;
    const std::size_t end = std::min(begin + block_size, data.size());
    float absmax = 0.0f;
    for (std::size_t i = begin; i < end; ++i) absmax = std::max(absmax, std::fabs(data[i]));
    const float scale = absmax / 127.0f;
    q.scales[b] = scale;
    for (std::size_t i = begin; i < end; ++i) {
      if (scale == 0.0f) {
        q.codes[i] = 0;
        continue;
      }
      const float code = std::nearbyint(data[i] / scale);
      q.codes[i] = static_cast<std::int8_t>(std::clamp(code, -127.0f, 127.0f));
    }
  }
  return q;
}

HiddenStates dequantize_hidden(const QuantizedHidden& q) {
  if (q.codes.size() != q.rows * q.cols || q.block_size == 0 ||
      q.scales.size() != (q.codes.size() + q.block_size - 1) / q.block_size)
    throw ProtocolError("malformed quantized activations");
  HiddenStates h;
  h.position_offset = q.position_offset;
  h.values = Matrix(q.rows, q.cols);
  auto out = h.values.data();
  for (std::size_t i = 0; i < q.codes.size(); ++i)
    out[i] = static_cast<float>(q.codes[i]) * q.scales[i / q.block_size];
  return h;
}

}  // namespace swarmpipe
