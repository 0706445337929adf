#include "spvnas/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "spvnas/backbone.hpp"
#include "spvnas/errors.hpp"

namespace spvnas {

namespace {

constexpr char kMagic[4] = {'S', 'P', 'V', 'N'};

template <class T>
void put(std::vector<char>& out, T v) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  U u = std::bit_cast<U>(v);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(const std::vector<char>& b) : b_(b) {}

  template <class T>
  T get() {
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    need(sizeof(U));
    U u = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      u |= static_cast<U>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return std::bit_cast<T>(u);
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(b_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) {
    if (b_.size() - pos_ < n) throw DataError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  const std::vector<char>& b_;
  std::size_t pos_ = 0;
};

}  // namespace

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::vector<char> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<char> out(std::begin(kMagic), std::end(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.metadata.size()));
  out.insert(out.end(), ckpt.metadata.begin(), ckpt.metadata.end());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put<std::uint64_t>(out, d);
    for (float v : t.data) put<float>(out, v);
  }
  return out;
}

Checkpoint decode_checkpoint(const std::vector<char>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw DataError("not a checkpoint file (missing SPVN magic)");
  }
  std::vector<char> rest(bytes.begin() + 4, bytes.end());
  Reader r(rest);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint c;
  c.metadata = r.bytes(r.get<std::uint32_t>());
  const auto count = r.get<std::uint32_t>();
  c.tensors.resize(count);
  for (auto& t : c.tensors) {
    t.name = r.bytes(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    std::uint64_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      t.shape.push_back(r.get<std::uint64_t>());
      n *= t.shape.back();
    }
    if (n > rest.size()) throw DataError("checkpoint tensor '" + t.name + "' is larger than the file");
    t.data.resize(n);
    for (auto& v : t.data) v = r.get<float>();
  }
  if (!r.done()) throw DataError("trailing bytes after the last checkpoint tensor");
  return c;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("failed writing " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void copy_leading_block(const float* src, const std::vector<std::size_t>& src_shape, float* dst,
                        const std::vector<std::size_t>& dst_shape) {
  if (src_shape.size() != dst_shape.size()) throw ShapeError("tensor ranks differ");
  const std::size_t rank = dst_shape.size();
  for (std::size_t i = 0; i < rank; ++i) {
    if (dst_shape[i] > src_shape[i]) throw ShapeError("destination block exceeds source tensor");
  }
  if (rank == 0) {
    *dst = *src;
    return;
  }
  std::vector<std::size_t> src_stride(rank, 1), dst_stride(rank, 1);
  for (std::size_t i = rank - 1; i > 0; --i) {
    src_stride[i - 1] = src_stride[i] * src_shape[i];
    dst_stride[i - 1] = dst_stride[i] * dst_shape[i];
  }
  std::size_t total = 1;
  for (auto d : dst_shape) total *= d;
  if (total == 0) return;
  std::vector<std::size_t> idx(rank, 0);
  const std::size_t inner = dst_shape[rank - 1];
  for (std::size_t done = 0; done < total; done += inner) {
    std::size_t so = 0, d_off = 0;
    for (std::size_t i = 0; i + 1 < rank; ++i) {
      so += idx[i] * src_stride[i];
      d_off += idx[i] * dst_stride[i];
    }
    std::memcpy(dst + d_off, src + so, inner * sizeof(float));
    for (std::size_t i = rank - 1; i-- > 0;) {
      if (++idx[i] < dst_shape[i]) break;
      idx[i] = 0;
    }
  }
}

void copy_tensors(const TensorList& src, TensorList& dst) {
  for (auto& d : dst) {
    const TensorSlot* s = nullptr;
    for (const auto& cand : src) {
      if (cand.name == d.name) {
        s = &cand;
        break;
      }
    }
    if (!s) throw DataError("no source tensor named '" + d.name + "'");
    try {
      copy_leading_block(s->value, s->shape, d.value, d.shape);
    } catch (const ShapeError& e) {
      throw ShapeError("tensor '" + d.name + "': " + e.what());
    }
  }
}

void load_tensors(const Checkpoint& src, TensorList& dst) {
  for (auto& d : dst) {
    const NamedTensor* s = src.find(d.name);
    if (!s) throw DataError("checkpoint has no tensor named '" + d.name + "'");
    std::vector<std::size_t> shape(s->shape.begin(), s->shape.end());
    try {
      copy_leading_block(s->data.data(), shape, d.value, d.shape);
    } catch (const ShapeError& e) {
      throw ShapeError("tensor '" + d.name + "': " + e.what());
    }
  }
}

Checkpoint network_checkpoint(Network& net, const std::string& extra_metadata_json) {
  nlohmann::json meta = nlohmann::json::parse(extra_metadata_json);
  meta["arch"] = nlohmann::json::parse(to_json(net.allocation()));
  meta["family"] = family_name(net.family());
  meta["elastic"] = net.elastic();
  Checkpoint c;
  c.metadata = meta.dump();
  for (const auto& t : net.tensors()) {
    NamedTensor nt;
    nt.name = t.name;
    nt.shape.assign(t.shape.begin(), t.shape.end());
    nt.data.assign(t.value, t.value + t.numel());
    c.tensors.push_back(std::move(nt));
  }
  return c;
}

Network network_from_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(ckpt.metadata);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint metadata is not JSON: ") + e.what());
  }
  if (!meta.contains("arch") || !meta.contains("family")) {
    throw DataError("checkpoint metadata lacks arch/family");
  }
  Network net(arch_from_json(meta["arch"].dump()), family_from_name(meta["family"].get<std::string>()),
              meta.value("elastic", false));
  TensorList dst = net.tensors();
  load_tensors(ckpt, dst);
  return net;
}

}  // namespace spvnas
