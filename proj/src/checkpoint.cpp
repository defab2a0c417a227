#include "geovit/checkpoint.hpp"

#include <zlib.h>

#include <fstream>
#include <unordered_map>

#include "geovit/detail/bytes.hpp"

namespace geovit {

using detail::ByteReader;
using detail::put_f32;
using detail::put_u32;
using detail::put_u64;

namespace {

constexpr uint64_t kMaxBlockElems = 1ull << 40;

uint32_t crc_of(const std::string& bytes, size_t len) {
  uLong crc = crc32(0L, Z_NULL, 0);
  return static_cast<uint32_t>(crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(len)));
}

}  // namespace

void save_checkpoint(const std::string& path, const RunConfig& config, const ParamStore& params) {
  std::string buf = "GVCK";
  put_u32(buf, 1);  // version
  const std::string cfg = config.canonical_text();
  put_u32(buf, static_cast<uint32_t>(cfg.size()));
  buf += cfg;
  put_u32(buf, static_cast<uint32_t>(params.items().size()));
  for (const auto& [name, t] : params.items()) {
    put_u32(buf, static_cast<uint32_t>(name.size()));
    buf += name;
    put_u32(buf, static_cast<uint32_t>(t.shape().size()));
    for (int64_t d : t.shape()) put_u64(buf, static_cast<uint64_t>(d));
    for (int64_t i = 0; i < t.numel(); ++i) put_f32(buf, static_cast<float>(t.data()[i]));
  }
  put_u32(buf, crc_of(buf, buf.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("save_checkpoint: short write to " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_checkpoint: cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < 4) throw TruncatedError("read_checkpoint: " + path + " is shorter than the magic");
  if (bytes.compare(0, 4, "GVCK") != 0) throw BadMagicError("read_checkpoint: " + path + " does not start with GVCK");

  // Parse first: the layout is self-describing, so a cut-off file surfaces as
  // a truncation rather than a generic checksum mismatch.
  ByteReader r(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), "checkpoint file");
  r.off = 4;
  const uint32_t version = r.u32();

  const uint32_t cfg_len = r.u32();
  r.need(cfg_len);
  const std::string cfg_text(bytes, r.off, cfg_len);
  r.off += cfg_len;

  Checkpoint ck;
  const uint32_t n_blocks = r.u32();
  for (uint32_t b = 0; b < n_blocks; ++b) {
    const uint32_t name_len = r.u32();
    r.need(name_len);
    std::string name(bytes, r.off, name_len);
    r.off += name_len;
    const uint32_t ndim = r.u32();
    if (ndim > 8) throw FormatError("read_checkpoint: " + path + " block '" + name + "' has too many dims");
    Shape shape(ndim);
    uint64_t numel = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      const uint64_t dim = r.u64();
      if (dim == 0 || dim > kMaxBlockElems || numel > kMaxBlockElems / dim) {
        throw FormatError("read_checkpoint: " + path + " block '" + name + "' has an impossible shape");
      }
      numel *= dim;
      shape[d] = static_cast<int64_t>(dim);
    }
    std::vector<double> values(numel);
    for (uint64_t i = 0; i < numel; ++i) values[i] = static_cast<double>(r.f32());
    ck.shapes.emplace_back(std::move(name), std::move(shape));
    ck.values.push_back(std::move(values));
  }

  if (r.off + 4 != bytes.size()) throw FormatError("read_checkpoint: " + path + " carries trailing bytes");
  const uint32_t stored = r.u32();
  if (crc_of(bytes, bytes.size() - 4) != stored) {
    throw ChecksumError("read_checkpoint: " + path + " fails its checksum");
  }
  if (version != 1) {
    throw FormatError("read_checkpoint: " + path + " has unsupported version " + std::to_string(version));
  }

  try {
    ck.config = parse_run_config_text(cfg_text);
  } catch (const std::invalid_argument& e) {
    throw FormatError("read_checkpoint: " + path + " embeds a config that does not parse: " + e.what());
  }
  return ck;
}

void apply_checkpoint(const Checkpoint& ck, ParamStore& params) {
  if (ck.shapes.size() != params.items().size()) {
    throw std::runtime_error("apply_checkpoint: checkpoint has " + std::to_string(ck.shapes.size()) +
                             " blocks but the store has " + std::to_string(params.items().size()));
  }
  for (size_t b = 0; b < ck.shapes.size(); ++b) {
    const auto& [name, shape] = ck.shapes[b];
    if (!params.has(name)) throw std::runtime_error("apply_checkpoint: store has no parameter '" + name + "'");
    Tensor t = params.at(name);
    if (t.shape() != shape) {
      throw std::runtime_error("apply_checkpoint: shape mismatch on '" + name + "': checkpoint " + shape_str(shape) +
                               " vs store " + shape_str(t.shape()));
    }
    std::copy(ck.values[b].begin(), ck.values[b].end(), t.data());
  }
}

}  // namespace geovit
