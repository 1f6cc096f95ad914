#include "tfill/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "tfill/rng.hpp"

namespace tfill {

namespace {

constexpr char kMagic[4] = {'T', 'F', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& buf, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, sizeof(bits));
  put_u64(buf, bits);
}

struct Reader {
  const unsigned char* p;
  std::size_t remaining;

  void need(std::size_t n, const char* what) {
    if (remaining < n) {
      throw CheckpointError(CheckpointError::Kind::Truncated,
                            std::string("checkpoint truncated while reading ") + what);
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    p += 4;
    remaining -= 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    p += 8;
    remaining -= 8;
    return v;
  }
  double f64(const char* what) {
    std::uint64_t bits = u64(what);
    double d;
    std::memcpy(&d, &bits, sizeof(d));
    return d;
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(p), n);
    p += n;
    remaining -= n;
    return s;
  }
};

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::string buf;
  buf.append(kMagic, 4);
  put_u32(buf, kVersion);
  put_u32(buf, static_cast<std::uint32_t>(ckpt.config_text.size()));
  buf.append(ckpt.config_text);
  put_u32(buf, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    put_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf.append(name);
    put_u32(buf, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) put_u32(buf, static_cast<std::uint32_t>(d));
    for (double v : t.data()) put_f64(buf, v);
  }
  put_u64(buf, fnv1a64(buf.data(), buf.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointError::Kind::Format, "cannot open " + path + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw CheckpointError(CheckpointError::Kind::Format, "write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::Format, "cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (buf.size() < 4 + 4 + 4 + 4 + 8) {
    throw CheckpointError(CheckpointError::Kind::Truncated, "checkpoint file too short: " + path);
  }
  if (std::memcmp(buf.data(), kMagic, 4) != 0) {
    throw CheckpointError(CheckpointError::Kind::BadMagic, "bad magic in " + path);
  }
  std::uint64_t stored = 0;
  for (int i = 0; i < 8; ++i) {
    stored |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[buf.size() - 8 + i]))
              << (8 * i);
  }
  std::uint64_t actual = fnv1a64(buf.data(), buf.size() - 8);
  if (stored != actual) {
    throw CheckpointError(CheckpointError::Kind::Checksum, "checksum mismatch in " + path);
  }

  Reader r{reinterpret_cast<const unsigned char*>(buf.data()) + 4, buf.size() - 4 - 8};
  Checkpoint ckpt;
  ckpt.version = r.u32("version");
  if (ckpt.version != kVersion) {
    throw CheckpointError(CheckpointError::Kind::Version,
                          "unsupported checkpoint version " + std::to_string(ckpt.version));
  }
  std::uint32_t config_len = r.u32("config length");
  ckpt.config_text = r.bytes(config_len, "config");
  std::uint32_t count = r.u32("tensor count");
  ckpt.tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t name_len = r.u32("tensor name length");
    std::string name = r.bytes(name_len, "tensor name");
    std::uint32_t rank = r.u32("tensor rank");
    if (rank > 8) throw CheckpointError(CheckpointError::Kind::Format, "implausible tensor rank");
    Shape shape;
    std::int64_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      std::uint32_t dim = r.u32("tensor dim");
      if (dim == 0 || dim > (1u << 28)) {
        throw CheckpointError(CheckpointError::Kind::Format, "implausible tensor dimension");
      }
      shape.push_back(static_cast<int>(dim));
      n *= dim;
    }
    r.need(static_cast<std::size_t>(n) * 8, "tensor data");
    std::vector<double> data(static_cast<std::size_t>(n));
    for (auto& v : data) v = r.f64("tensor data");
    ckpt.tensors.emplace_back(std::move(name), Tensor::from_data(std::move(shape), std::move(data)));
  }
  if (r.remaining != 0) {
    throw CheckpointError(CheckpointError::Kind::Format,
                          "trailing bytes after tensor table in " + path);
  }
  return ckpt;
}

std::uint64_t checkpoint_file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::Format, "cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return fnv1a64(buf.data(), buf.size());
}

}  // namespace tfill
