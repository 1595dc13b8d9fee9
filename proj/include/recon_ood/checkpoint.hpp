#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "recon_ood/param_store.hpp"
#include "recon_ood/tensor.hpp"

namespace recon_ood {

inline constexpr std::string_view kCheckpointMagic = "ROOD";
inline constexpr std::uint16_t kCheckpointVersion = 1;
inline constexpr std::string_view kMetaPrefix = "meta/";

struct CheckpointRecord {
  std::string name;
  Tensor tensor;
};

/// Ordered list of named float tensors. Metadata values are stored as
/// one-element records whose names start with "meta/".
struct Checkpoint {
  std::vector<CheckpointRecord> records;

  const Tensor* find(std::string_view name) const;
  void set_meta(const std::string& key, double value);
  std::optional<double> meta(std::string_view key) const;
  std::map<std::string, double> all_meta() const;
};

// Layout: magic "ROOD", u16 version, then per record
// (u16 name length, name bytes, u8 rank, u32 dims..., f32 payload), little-endian.
std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint checkpoint_from_store(const ParamStore<float>& store,
                                 const std::map<std::string, double>& meta = {});
// Copies every store parameter's value from the checkpoint; shapes must match.
void restore_store(const Checkpoint& ckpt, ParamStore<float>& store);

}  // namespace recon_ood
