#pragma once

#include <optional>
#include <string>

#include "cil/memory.hpp"
#include "cil/model.hpp"

namespace cil {

// Checkpoint container, format version 1. All integers and floats are
// little-endian regardless of host byte order.
//
//   offset  field
//   ------  -----
//   0       magic "CILCKPT\n" (8 bytes)
//   8       u32 version (= 1)
//   12      u32 number of layer dims, then that many u32 dims
//           u32 classes_per_task (m)
//           u32 task count (head blocks present)
//           u32 tensor count, then per tensor: u32 rows, u32 cols,
//             rows*cols f64 values in row-major order (params() order)
//           u32 rng state length, then that many bytes (engine text state)
//           u8 memory flag; when 1:
//             u64 capacity
//             u32 bucket count, then per bucket: i32 class id, u32 count,
//               u32 dim, count*dim f64 values (insertion order preserved)

struct LoadedCheckpoint {
  IncrementalClassifier model;
  std::optional<ExemplarMemory> memory;
};

void save_checkpoint(const std::string& path, const IncrementalClassifier& model,
                     const ExemplarMemory* memory = nullptr);

/// Throws IngestError on a missing file, bad magic, or a malformed body.
LoadedCheckpoint load_checkpoint(const std::string& path);

} // namespace cil
