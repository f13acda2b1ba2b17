#include "eegc/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>

#include "binio.hpp"
#include "eegc/errors.hpp"

namespace eegc {

using namespace binio;

void save_checkpoint(
    const std::string& path,
    const std::vector<std::pair<std::string, ag::TensorPtr>>& tensors,
    const std::map<std::string, std::string>& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("checkpoint: cannot open '" + path + "' for writing");

  put_string(out, kCheckpointMagic);
  put_u32(out, static_cast<std::uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    put_string(out, k);
    put_string(out, v);
  }
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_string(out, name);
    put_u32(out, static_cast<std::uint32_t>(t->shape.size()));
    for (int d : t->shape) put_u64(out, static_cast<std::uint64_t>(d));
    for (double v : t->value) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  out.flush();
  if (!out) throw DataError("checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open '" + path + "'");

  if (get_string(in, "checkpoint magic") != kCheckpointMagic)
    throw DataError("checkpoint: '" + path + "' is not a " +
                    std::string(kCheckpointMagic) + " file");

  Checkpoint ckpt;
  const auto n_meta = get_u32(in, "checkpoint meta count");
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto k = get_string(in, "checkpoint meta key");
    auto v = get_string(in, "checkpoint meta value");
    ckpt.meta.emplace(std::move(k), std::move(v));
  }
  const auto n_tensors = get_u32(in, "checkpoint tensor count");
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    auto name = get_string(in, "checkpoint tensor name");
    const auto rank = get_u32(in, "checkpoint tensor rank");
    ag::Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d)
      shape.push_back(static_cast<int>(get_u64(in, "checkpoint tensor dim")));
    const auto n = ag::numel(shape);
    std::vector<double> values(static_cast<size_t>(n));
    for (auto& v : values)
      v = std::bit_cast<double>(get_u64(in, "checkpoint tensor data"));
    ckpt.tensors.emplace_back(
        std::move(name),
        ag::Tensor::from_values(std::move(shape), std::move(values)));
  }
  return ckpt;
}

}  // namespace eegc
