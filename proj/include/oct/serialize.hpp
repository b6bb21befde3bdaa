#ifndef OCT_SERIALIZE_HPP
#define OCT_SERIALIZE_HPP

#include <filesystem>
#include <vector>

#include "oct/optim.hpp"
#include "oct/tensor.hpp"

namespace oct {

/// Tensor container: magic "OCTH", version u16 LE, dtype u8 (0 = f32),
/// rank u8, dims as u64 LE, then raw f32 LE row-major payload.
void write_tensor(const std::filesystem::path& file, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& file);

/// Checkpoint directory: one container per parameter plus `manifest.txt`
/// mapping parameter names to file names (name<TAB>file per line).
void write_checkpoint(const std::filesystem::path& dir, const std::vector<Param>& params);

/// Loads into an existing parameter list; every parameter name must be
/// present in the manifest and shapes must match.
void load_checkpoint(const std::filesystem::path& dir, std::vector<Param>& params);

}  // namespace oct

#endif
