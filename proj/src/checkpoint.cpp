#include "cil/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "cil/errors.hpp"

namespace cil {

namespace {

constexpr char kMagic[9] = "CILCKPT\n";
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IngestError("checkpoint: truncated file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw IngestError("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

} // namespace

void save_checkpoint(const std::string& path, const IncrementalClassifier& model,
                     const ExemplarMemory* memory) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestError("checkpoint: cannot open " + path + " for writing");

  out.write(kMagic, 8);
  put_u32(out, kVersion);

  put_u32(out, static_cast<std::uint32_t>(model.layer_dims().size()));
  for (std::size_t d : model.layer_dims()) put_u32(out, static_cast<std::uint32_t>(d));
  put_u32(out, static_cast<std::uint32_t>(model.classes_per_task()));
  put_u32(out, static_cast<std::uint32_t>(model.num_tasks()));

  const auto params = model.params();
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const Matrix* p : params) {
    put_u32(out, static_cast<std::uint32_t>(p->rows()));
    put_u32(out, static_cast<std::uint32_t>(p->cols()));
    for (double v : p->data()) put_f64(out, v);
  }

  const std::string rng = model.rng_state();
  put_u32(out, static_cast<std::uint32_t>(rng.size()));
  out.write(rng.data(), static_cast<std::streamsize>(rng.size()));

  out.put(memory ? '\1' : '\0');
  if (memory) {
    put_u64(out, memory->capacity());
    std::uint32_t n_buckets = 0;
    for (const auto& [label, bucket] : memory->buckets())
      if (!bucket.empty()) ++n_buckets;
    put_u32(out, n_buckets);
    for (const auto& [label, bucket] : memory->buckets()) {
      if (bucket.empty()) continue;
      put_u32(out, static_cast<std::uint32_t>(label));
      put_u32(out, static_cast<std::uint32_t>(bucket.size()));
      put_u32(out, static_cast<std::uint32_t>(bucket.front().input.size()));
      for (const auto& s : bucket)
        for (double v : s.input) put_f64(out, v);
    }
  }
  if (!out) throw IngestError("checkpoint: write to " + path + " failed");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("checkpoint: cannot open " + path);

  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw IngestError("checkpoint: " + path + " is not a checkpoint file");
  if (get_u32(in) != kVersion) throw IngestError("checkpoint: unsupported version");

  const std::uint32_t n_dims = get_u32(in);
  if (n_dims < 2 || n_dims > 64) throw IngestError("checkpoint: implausible layer count");
  std::vector<std::size_t> dims(n_dims);
  for (auto& d : dims) d = get_u32(in);
  const std::uint32_t m = get_u32(in);
  const std::uint32_t tasks = get_u32(in);

  IncrementalClassifier model(dims, m, /*seed=*/0);
  for (std::uint32_t t = 0; t < tasks; ++t) model.expand_head();

  const std::uint32_t n_tensors = get_u32(in);
  auto params = model.params();
  if (n_tensors != params.size()) throw IngestError("checkpoint: tensor count mismatch");
  for (Matrix* p : params) {
    const std::uint32_t rows = get_u32(in);
    const std::uint32_t cols = get_u32(in);
    if (rows != p->rows() || cols != p->cols())
      throw IngestError("checkpoint: tensor shape mismatch");
    for (double& v : p->data()) v = get_f64(in);
  }

  const std::uint32_t rng_len = get_u32(in);
  std::string rng_state(rng_len, '\0');
  in.read(rng_state.data(), rng_len);
  if (!in) throw IngestError("checkpoint: truncated rng state");
  model.set_rng_state(rng_state);

  LoadedCheckpoint result{std::move(model), std::nullopt};

  const int flag = in.get();
  if (flag == 1) {
    ExemplarMemory memory(get_u64(in));
    const std::uint32_t n_buckets = get_u32(in);
    // rebuild buckets through a per-class single-task layout-free path:
    // reconstruct by direct insertion using a scratch dataset per class
    for (std::uint32_t b = 0; b < n_buckets; ++b) {
      const std::int32_t label = static_cast<std::int32_t>(get_u32(in));
      const std::uint32_t count = get_u32(in);
      const std::uint32_t dim = get_u32(in);
      std::vector<ExemplarMemory::StoredSample> bucket(count);
      for (auto& s : bucket) {
        s.label = label;
        s.input.resize(dim);
        for (double& v : s.input) v = get_f64(in);
      }
      memory.restore_bucket(label, std::move(bucket));
    }
    result.memory = std::move(memory);
  } else if (flag != 0) {
    throw IngestError("checkpoint: bad memory flag");
  }
  return result;
}

} // namespace cil
