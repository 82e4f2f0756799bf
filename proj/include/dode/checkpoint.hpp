#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dode/netcore.hpp"
#include "dode/schedule.hpp"

namespace dode {

/// Byte layout (all integers little-endian):
///   0  8 bytes  magic "DODECKPT"
///   8  u32      format version (1)
///  12  u32      reserved, 0
///  16  u64      header length H
///  24  H bytes  UTF-8 JSON header
///  24+H         param_count f64 (raw parameters), then param_count f64 (EMA),
///               then gamma_net_count f64 (adaptive IS net, may be 0)
struct Checkpoint {
  ModelShape shape;
  LogSnrSchedule schedule;
  std::uint64_t seed = 0;
  std::uint64_t iteration = 0;
  std::vector<double> params;
  std::vector<double> ema;
  std::vector<double> gamma_net;  // MonotoneGammaNet params when trained adaptively
  std::size_t gamma_net_hidden = 0;

  /// The EMA weights by default; raw weights when use_ema is false.
  VelocityModel model(bool use_ema = true) const;
};

constexpr std::uint32_t kCheckpointVersion = 1;

std::string checkpoint_to_bytes(const Checkpoint& c);
Checkpoint checkpoint_from_bytes(const std::string& bytes);
void save_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace dode
