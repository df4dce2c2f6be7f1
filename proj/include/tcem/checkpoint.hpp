#pragma once

// Versioned text checkpoint. Layout:
//
//   tcemnet-checkpoint 1
//   meta <key> <value...>          zero or more, value runs to end of line
//   tensor <name> <rows> <cols>
//   <row of cols hexfloat values>  repeated rows times
//   end
//
// Values are C99 hexfloats, so save -> load -> save is byte-identical.

#include <filesystem>
#include <map>
#include <string>

#include "tcem/model.hpp"

namespace tcem {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  TcemParams params;
  std::map<std::string, std::string> meta;  // free-form run metadata
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& text);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tcem
