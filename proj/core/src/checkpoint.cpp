#include "metacal/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

#include "metacal/error.hpp"

namespace metacal {

namespace {

void put_u64(std::vector<std::byte>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xffU));
}

class Reader {
 public:
  explicit Reader(std::span<const std::byte> bytes) : bytes_(bytes) {}

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::to_integer<std::uint8_t>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }

  std::span<const std::byte> take(std::size_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError("checkpoint is truncated");
  }
  std::span<const std::byte> bytes_;
  std::size_t pos_ = 0;
};

Activation activation_from_code(std::uint64_t code) {
  switch (code) {
    case 0: return Activation::ReLU;
    case 1: return Activation::Linear;
    default: throw DataError(fmt::format("checkpoint has unknown activation code {}", code));
  }
}

}  // namespace

std::vector<std::byte> serialize_params(const ParamVector& params) {
  const MlpSpec& spec = params.spec();
  std::vector<std::byte> out;
  out.reserve(8 * (8 + spec.hidden_widths.size() + params.size()));
  for (char c : kCheckpointMagic) out.push_back(static_cast<std::byte>(c));
  put_u64(out, spec.input_dim);
  put_u64(out, spec.output_dim);
  put_u64(out, static_cast<std::uint64_t>(spec.hidden_activation));
  put_u64(out, static_cast<std::uint64_t>(spec.output_activation));
  put_u64(out, spec.hidden_widths.size());
  for (auto w : spec.hidden_widths) put_u64(out, w);
  put_u64(out, params.size());
  for (double v : params.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

ParamVector deserialize_params(std::span<const std::byte> bytes) {
  Reader in(bytes);
  const auto magic = in.take(sizeof(kCheckpointMagic));
  if (std::memcmp(magic.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw DataError("not a parameter checkpoint (bad magic)");
  }
  MlpSpec spec;
  spec.input_dim = in.u64();
  spec.output_dim = in.u64();
  spec.hidden_activation = activation_from_code(in.u64());
  spec.output_activation = activation_from_code(in.u64());
  const std::uint64_t n_hidden = in.u64();
  if (n_hidden > 1024) throw DataError("checkpoint declares an implausible layer count");
  spec.hidden_widths.resize(n_hidden);
  for (auto& w : spec.hidden_widths) w = in.u64();
  try {
    spec.validate();
  } catch (const InvalidArgument& e) {
    throw DataError(fmt::format("checkpoint architecture invalid: {}", e.what()));
  }
  const std::uint64_t count = in.u64();
  if (count != spec.param_count()) {
    throw DataError(fmt::format("checkpoint declares {} values but its architecture needs {}",
                                count, spec.param_count()));
  }
  std::vector<double> values(count);
  for (auto& v : values) v = std::bit_cast<double>(in.u64());
  if (!in.done()) throw DataError("checkpoint has trailing bytes");
  return ParamVector(std::move(spec), std::move(values));
}

void save_checkpoint(const std::filesystem::path& path, const ParamVector& params) {
  const auto bytes = serialize_params(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(fmt::format("cannot open {} for writing", path.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError(fmt::format("failed writing {}", path.string()));
}

ParamVector load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open checkpoint {}", path.string()));
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::byte> bytes(raw.size());
  std::transform(raw.begin(), raw.end(), bytes.begin(), [](char c) { return static_cast<std::byte>(c); });
  return deserialize_params(bytes);
}

}  // namespace metacal
