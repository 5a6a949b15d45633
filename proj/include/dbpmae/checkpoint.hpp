#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dbpmae/config.hpp"
#include "dbpmae/mae.hpp"
#include "dbpmae/optim.hpp"

namespace dbp {

// DBPCKPT1 container: 8-byte magic, one version byte, then length-prefixed
// named records. Tensor records store float32 little-endian payloads.
// Records written per checkpoint:
//   meta:config   the canonical config text
//   meta:epoch    u64
//   meta:fused    u64 0/1
//   rng:state     u64 pair {root seed, next epoch}
//   param:<name>  one tensor per model parameter
//   R:<site>      one tensor per decorrelation matrix (unfused only)
//   opt:step      u64, with opt:m:<name> / opt:v:<name> moment tensors
struct LoadedCheckpoint {
  TrainConfig config;
  int epoch = 0;
  bool fused = false;
  std::unique_ptr<MaeModel> model;
  bool has_optimizer = false;
  long opt_step = 0;
  std::vector<Vector> opt_m, opt_v;  // ordered like model->parameters()
  std::array<uint64_t, 2> rng_state{0, 0};
};

void save_checkpoint(const std::string& path, const MaeModel& model, const TrainConfig& config,
                     int epoch, bool fuse, const AdamW* optimizer = nullptr,
                     std::array<uint64_t, 2> rng_state = {0, 0});

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace dbp
