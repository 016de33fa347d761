#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ctcvo/model.hpp"

namespace ctcvo {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// First-moment and second-moment estimates aligned with a ParameterSet.
struct AdamState {
  long long step = 0;
  std::vector<Eigen::MatrixXd> m;
  std::vector<Eigen::MatrixXd> v;
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;    ///< mean window loss over the epoch
  double ctc = 0.0;     ///< mean CTC sum
  double global = 0.0;  ///< mean global-pose sum
  bool operator==(const EpochRecord&) const = default;
};

struct TrainingState {
  std::string stage;
  std::string scene_id;
  std::uint64_t seed = 0;
  int epochs_done = 0;
  long long iteration = 0;
  long long total_iterations = 0;
  std::vector<EpochRecord> history;
};

/// Decoded checkpoint file: configuration, normalization statistics, named
/// parameter blocks, training progress and optional optimizer state.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  ModelConfig config;
  NormStats stats;
  ParameterSet params;
  TrainingState state;
  std::optional<AdamState> adam;
};

/// Binary layout: 8-byte magic, uint32 version, uint64 header length, JSON
/// header, then the raw little-endian doubles of every block (column-major)
/// followed by optimizer moments when present. `prefixes` restricts the
/// stored blocks (empty = all); optimizer state is only written for full
/// checkpoints.
void save_checkpoint(const std::string& path, const VoModel& model, const TrainingState& state,
                     const AdamState* adam = nullptr, const std::vector<std::string>& prefixes = {});
Checkpoint read_checkpoint(const std::string& path);

/// Model holding every block of a full checkpoint.
VoModel model_from_checkpoint(const Checkpoint& ckpt);

/// Copies blocks whose names start with one of `prefixes` into `model`.
/// Throws CheckpointMismatch when the architectures differ or a block is
/// missing.
void load_blocks(VoModel& model, const Checkpoint& ckpt, const std::vector<std::string>& prefixes);

/// Architecture equality, ignoring the initialization seed.
bool same_architecture(const ModelConfig& a, const ModelConfig& b);
std::string describe_difference(const ModelConfig& a, const ModelConfig& b);

}  // namespace ctcvo
