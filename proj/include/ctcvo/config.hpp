#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ctcvo/dataset.hpp"
#include "ctcvo/evaluation.hpp"
#include "ctcvo/model.hpp"
#include "ctcvo/trainer.hpp"

namespace ctcvo {

/// Half-open frame range; end < 0 means the end of the sequence.
struct FrameRange {
  long long begin = 0;
  long long end = -1;
  bool operator==(const FrameRange&) const = default;
};

/// Every setting of a command-line run. Text form is flat `key=value`
/// lines; see `config_keys()` for the accepted keys.
struct RunConfig {
  ModelConfig model = ModelConfig::tiny();
  TrainConfig train;

  std::string data_source = "kitti";  ///< kitti | sevenscenes
  std::string data_root;              ///< defaults to $CTCVO_DATA_ROOT
  std::string data_sequence;          ///< kitti: "00"; sevenscenes: "chess/01"
  FrameRange train_frames;
  FrameRange test_frames;

  Mode eval_mode = Mode::Fused;
  std::vector<Variant> ablate_variants = {{Mode::Fused, 5}, {Mode::RelativeOnly, 5}, {Mode::GlobalOnly, 5}};

  /// Applies one setting. Throws ConfigError for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  /// Full snapshot, one line per key, that reproduces this configuration.
  std::string to_text() const;
};

/// Documented keys in snapshot order.
const std::vector<std::string>& config_keys();

/// Parses `key=value` text. `#` starts a comment line. Throws ConfigError.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig read_config_file(const std::string& path, RunConfig base = {});

/// "0:256" -> [0, 256); "256:" -> [256, end).
FrameRange parse_range(const std::string& s);
std::string to_string(const FrameRange& r);
/// "fused:5,relative_only:3".
std::vector<Variant> parse_variants(const std::string& s);

/// Loads the configured sequence and cuts the requested frame range.
SequenceRecord load_sequence(const RunConfig& cfg, const FrameRange& range);

}  // namespace ctcvo
