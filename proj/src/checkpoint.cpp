#include "dcc/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>

namespace dcc {

const char* to_string(ParamKind kind) {
  switch (kind) {
    case ParamKind::kConvWeight: return "conv_weight";
    case ParamKind::kLinearWeight: return "linear_weight";
    case ParamKind::kBias: return "bias";
    case ParamKind::kBnGamma: return "bn_gamma";
    case ParamKind::kBnBeta: return "bn_beta";
    case ParamKind::kRunningMean: return "running_mean";
    case ParamKind::kRunningVar: return "running_var";
  }
  return "unknown";
}

namespace {

constexpr std::array<char, 4> kMagic{'D', 'C', 'C', 'E'};

template <typename U>
void put_le(std::ostream& os, U v) {
  static_assert(std::is_unsigned_v<U>);
  std::array<char, sizeof(U)> buf;
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf.data(), buf.size());
}

template <typename U>
U get_le(std::istream& is, const char* what) {
  std::array<unsigned char, sizeof(U)> buf;
  is.read(reinterpret_cast<char*>(buf.data()), buf.size());
  if (is.gcount() != static_cast<std::streamsize>(buf.size())) {
    throw DataError(std::string("checkpoint: truncated while reading ") + what);
  }
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

template <typename T>
using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;

}  // namespace

template <typename T>
void write_checkpoint(std::ostream& os, const ParamStore<T>& params) {
  os.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(os, kCheckpointVersion);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(precision_of<T>()));
  put_le<std::uint64_t>(os, params.size());
  for (ParamId id = 0; id < params.size(); ++id) {
    const std::string& name = params.name(id);
    const Tensor<T>& t = params.tensor(id);
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put_le<std::uint64_t>(os, d);
    for (T v : t.values()) put_le<Bits<T>>(os, std::bit_cast<Bits<T>>(v));
  }
  if (!os) throw DataError("checkpoint: write failed");
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParamStore<T>& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("checkpoint: cannot open " + path.string() + " for writing");
  write_checkpoint(os, params);
}

CheckpointHeader read_checkpoint_header(std::istream& is) {
  std::array<char, 4> magic{};
  is.read(magic.data(), magic.size());
  if (is.gcount() != 4 || magic != kMagic) throw DataError("checkpoint: bad magic, not a DCCE file");
  CheckpointHeader h;
  h.version = get_le<std::uint32_t>(is, "version");
  if (h.version != kCheckpointVersion) {
    throw DataError("checkpoint: unsupported version " + std::to_string(h.version));
  }
  const auto tag = get_le<std::uint32_t>(is, "precision");
  if (tag > 1) throw DataError("checkpoint: unknown precision tag " + std::to_string(tag));
  h.precision = static_cast<Precision>(tag);
  h.count = get_le<std::uint64_t>(is, "tensor count");
  return h;
}

CheckpointHeader peek_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint: cannot open " + path.string());
  return read_checkpoint_header(is);
}

template <typename T>
void read_checkpoint(std::istream& is, ParamStore<T>& params) {
  const CheckpointHeader h = read_checkpoint_header(is);
  if (h.precision != precision_of<T>()) {
    throw DataError("checkpoint: stored precision " + to_string(h.precision) + " does not match model precision " +
                    to_string(precision_of<T>()));
  }
  std::set<std::string> seen;
  for (std::uint64_t r = 0; r < h.count; ++r) {
    const auto len = get_le<std::uint32_t>(is, "name length");
    if (len > (1u << 16)) throw DataError("checkpoint: implausible tensor name length");
    std::string name(len, '\0');
    is.read(name.data(), len);
    if (is.gcount() != static_cast<std::streamsize>(len)) throw DataError("checkpoint: truncated tensor name");
    const auto rank = get_le<std::uint32_t>(is, "rank");
    if (rank == 0 || rank > 8) throw DataError("checkpoint: tensor '" + name + "' has invalid rank");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(get_le<std::uint64_t>(is, "dims"));
    auto id = params.find(name);
    if (!id) throw DataError("checkpoint: tensor '" + name + "' does not exist in the model");
    Tensor<T>& t = params.tensor(*id);
    if (t.shape() != shape) {
      throw DataError("checkpoint: tensor '" + name + "' has shape " + shape_str(shape) + " but the model expects " +
                      shape_str(t.shape()));
    }
    for (auto& v : t.values()) v = std::bit_cast<T>(get_le<Bits<T>>(is, "values"));
    seen.insert(name);
  }
  for (ParamId id = 0; id < params.size(); ++id) {
    if (!seen.count(params.name(id))) {
      throw DataError("checkpoint: model tensor '" + params.name(id) + "' is missing from the checkpoint");
    }
  }
}

template <typename T>
void load_checkpoint(const std::filesystem::path& path, ParamStore<T>& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint: cannot open " + path.string());
  read_checkpoint(is, params);
}

template void write_checkpoint(std::ostream&, const ParamStore<float>&);
template void write_checkpoint(std::ostream&, const ParamStore<double>&);
template void save_checkpoint(const std::filesystem::path&, const ParamStore<float>&);
template void save_checkpoint(const std::filesystem::path&, const ParamStore<double>&);
template void read_checkpoint(std::istream&, ParamStore<float>&);
template void read_checkpoint(std::istream&, ParamStore<double>&);
template void load_checkpoint(const std::filesystem::path&, ParamStore<float>&);
template void load_checkpoint(const std::filesystem::path&, ParamStore<double>&);

}  // namespace dcc
