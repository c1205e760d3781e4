#include "tpc/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "tpc/errors.hpp"

namespace tpc {

const TensorRecord& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, rec] : tensors) {
    if (n == name) return rec;
  }
  throw FormatError("checkpoint has no tensor '" + name + "'");
}

void save_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
  if (ckpt.first_moments.size() != ckpt.second_moments.size()) {
    throw ContractError("checkpoint: moment buffers must pair up");
  }
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  io::write_u32(os, kCheckpointVersion);
  io::write_string(os, ckpt.config_json);
  io::write_u64(os, ckpt.step);
  io::write_u64(os, ckpt.epoch);
  io::write_string(os, ckpt.rng_state);
  io::write_u32(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, rec] : ckpt.tensors) {
    io::write_string(os, name);
    write_tensor(os, rec);
  }
  io::write_u64(os, static_cast<std::uint64_t>(ckpt.optim_step));
  io::write_u32(os, static_cast<std::uint32_t>(ckpt.first_moments.size()));
  for (std::size_t i = 0; i < ckpt.first_moments.size(); ++i) {
    write_tensor(os, ckpt.first_moments[i]);
    write_tensor(os, ckpt.second_moments[i]);
  }
  if (!os) throw FormatError("checkpoint write failed");
}

Checkpoint load_checkpoint(std::istream& is) {
  char magic[sizeof(kCheckpointMagic)];
  is.read(magic, sizeof(magic));
  if (is.gcount() != sizeof(magic) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw FormatError("not a checkpoint (bad magic)");
  }
  const std::uint32_t version = io::read_u32(is);
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint c;
  c.config_json = io::read_string(is);
  c.step = io::read_u64(is);
  c.epoch = io::read_u64(is);
  c.rng_state = io::read_string(is);
  const std::uint32_t n = io::read_u32(is);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = io::read_string(is, 4096);
    c.tensors.emplace_back(std::move(name), read_tensor(is));
  }
  c.optim_step = static_cast<std::int64_t>(io::read_u64(is));
  const std::uint32_t m = io::read_u32(is);
  for (std::uint32_t i = 0; i < m; ++i) {
    c.first_moments.push_back(read_tensor(is));
    c.second_moments.push_back(read_tensor(is));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after checkpoint");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  save_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return load_checkpoint(in);
}

}  // namespace tpc
