#include "stf/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace stf {

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'S', 'T', 'F', 'M'};

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) fail("checkpoint: truncated while reading " + what);
  return v;
}

}  // namespace

void CheckpointData::add_tensor(const std::string& name, Shape shape,
                                std::vector<double> values) {
  if (static_cast<int>(values.size()) != numel(shape))
    fail("checkpoint: tensor '" + name + "' payload does not match its shape");
  tensors.push_back({name, std::move(shape), std::move(values)});
}

bool CheckpointData::has_tensor(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return true;
  return false;
}

const TensorRecord& CheckpointData::tensor(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  fail("checkpoint: missing tensor '" + name + "'");
}

void CheckpointData::add_store(const std::string& prefix, const ParamStore& store) {
  for (const auto& [name, p] : store.all()) add_tensor(prefix + name, p.shape, p.value);
}

void CheckpointData::restore_store(const std::string& prefix, ParamStore& store) const {
  for (auto& [name, p] : store.all()) {
    const TensorRecord& rec = tensor(prefix + name);
    if (rec.shape != p.shape)
      fail("checkpoint: tensor '" + prefix + name + "' shape mismatch");
    p.value = rec.values;
    std::fill(p.grad.begin(), p.grad.end(), 0.0);
  }
}

void save_checkpoint(const std::string& path, const CheckpointData& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("checkpoint: cannot write '" + path + "'");
  out.write(kMagic, 4);
  write_pod<uint32_t>(out, data.version);
  write_pod<uint64_t>(out, data.config_text.size());
  out.write(data.config_text.data(), static_cast<std::streamsize>(data.config_text.size()));
  write_pod<uint64_t>(out, data.iteration);
  write_pod<uint32_t>(out, 4);
  for (uint64_t s : data.rng_state) write_pod<uint64_t>(out, s);

  std::vector<const TensorRecord*> sorted;
  for (const auto& t : data.tensors) sorted.push_back(&t);
  std::sort(sorted.begin(), sorted.end(),
            [](const TensorRecord* a, const TensorRecord* b) { return a->name < b->name; });
  write_pod<uint64_t>(out, sorted.size());
  for (const TensorRecord* t : sorted) {
    write_pod<uint32_t>(out, static_cast<uint32_t>(t->name.size()));
    out.write(t->name.data(), static_cast<std::streamsize>(t->name.size()));
    write_pod<uint32_t>(out, static_cast<uint32_t>(t->shape.size()));
    for (int e : t->shape) write_pod<uint64_t>(out, static_cast<uint64_t>(e));
    out.write(reinterpret_cast<const char*>(t->values.data()),
              static_cast<std::streamsize>(t->values.size() * sizeof(double)));
  }
  if (!out) fail("checkpoint: write failed for '" + path + "'");
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("checkpoint: cannot read '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    fail("checkpoint: '" + path + "' is not a checkpoint file");
  CheckpointData data;
  data.version = read_pod<uint32_t>(in, "version");
  if (data.version != kCheckpointVersion)
    fail("checkpoint: version " + std::to_string(data.version) + " unsupported (expected " +
         std::to_string(kCheckpointVersion) + ")");
  const uint64_t cfg_len = read_pod<uint64_t>(in, "config length");
  data.config_text.resize(cfg_len);
  in.read(data.config_text.data(), static_cast<std::streamsize>(cfg_len));
  if (!in) fail("checkpoint: truncated config snapshot");
  data.iteration = read_pod<uint64_t>(in, "iteration");
  const uint32_t rng_n = read_pod<uint32_t>(in, "rng state size");
  if (rng_n != 4) fail("checkpoint: unexpected rng state size");
  for (auto& s : data.rng_state) s = read_pod<uint64_t>(in, "rng state");

  const uint64_t count = read_pod<uint64_t>(in, "tensor count");
  data.tensors.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    TensorRecord rec;
    const uint32_t name_len = read_pod<uint32_t>(in, "tensor name length");
    rec.name.resize(name_len);
    in.read(rec.name.data(), name_len);
    if (!in) fail("checkpoint: truncated tensor name");
    const uint32_t rank = read_pod<uint32_t>(in, "tensor rank");
    rec.shape.resize(rank);
    for (auto& e : rec.shape) e = static_cast<int>(read_pod<uint64_t>(in, "tensor extent"));
    rec.values.resize(static_cast<size_t>(numel(rec.shape)));
    in.read(reinterpret_cast<char*>(rec.values.data()),
            static_cast<std::streamsize>(rec.values.size() * sizeof(double)));
    if (!in) fail("checkpoint: truncated tensor payload");
    data.tensors.push_back(std::move(rec));
  }
  return data;
}

}  // namespace stf
