#pragma once

#include <cstdint>
#include <string>

#include "acc/param_store.hpp"

namespace acc {

// Checkpoint layout, little-endian:
//   magic "ACCK", u32 version (=1), u64 config_hash, u64 n_entries,
//   then per entry: u32 name length, name bytes, u32 rank, i64 dims,
//   values as f64 regardless of the build's scalar type.
// Entries appear in parameter creation order, so saves are byte-stable.
void save_checkpoint(const ParamStore& ps, const std::string& path, uint64_t config_hash);

uint64_t checkpoint_config_hash(const std::string& path);

// Fills every parameter from the file. The config hash and the full name set
// must match; shapes are checked per entry.
void load_checkpoint(ParamStore& ps, const std::string& path, uint64_t expected_hash);

// Fills the by-name intersection (shapes must still match); ignores the
// config hash. Returns how many parameters were filled. Intended for seeding
// an encoder from externally produced weights.
size_t load_checkpoint_partial(ParamStore& ps, const std::string& path);

}  // namespace acc
