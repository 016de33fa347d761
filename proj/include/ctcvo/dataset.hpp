#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "ctcvo/ctc_loss.hpp"
#include "ctcvo/image.hpp"
#include "ctcvo/pose.hpp"

namespace ctcvo {

enum class Source { Kitti, SevenScenes, Synthetic };

std::string to_string(Source s);

/// A frame is either a file on disk or an image held in memory.
struct FrameRef {
  std::string path;
  std::shared_ptr<const Image> image;
};

struct SequenceRecord {
  std::string id;
  std::vector<FrameRef> frames;
  std::vector<Pose> gt;  ///< camera-to-world, one per frame
  double fps = 10.0;
  Source source = Source::Synthetic;

  std::size_t size() const { return frames.size(); }
  /// Decoded frame resized to height x width.
  Image image(std::size_t i, int height, int width) const;
};

/// All frames of a sequence decoded and resized.
std::vector<Image> load_frames(const SequenceRecord& seq, int height, int width);

// KITTI odometry layout:
//   <root>/poses/<seq>.txt                 one 3x4 row-major matrix per line
//   <root>/sequences/<seq>/image_2/*.png   frames, sorted by name
SequenceRecord load_kitti_sequence(const std::string& root, const std::string& seq);
std::vector<Pose> read_kitti_poses(const std::string& path);
void write_kitti_poses(const std::string& path, const std::vector<Pose>& poses);
/// Writes poses and frames in the KITTI layout.
void write_kitti_sequence(const std::string& root, const SequenceRecord& seq);

// 7-Scenes layout:
//   <root>/<scene>/seq-<id>/frame-NNNNNN.color.png
//   <root>/<scene>/seq-<id>/frame-NNNNNN.pose.txt   4x4 homogeneous matrix
SequenceRecord load_sevenscenes_sequence(const std::string& root, const std::string& scene, const std::string& seq);
Pose read_sevenscenes_pose(const std::string& path);
void write_sevenscenes_pose(const std::string& path, const Pose& pose);

/// Downward-looking camera flying over a procedural ground texture.
struct SynthParams {
  int n_frames = 320;
  double speed_min = 20.0;  ///< m/s
  double speed_max = 30.0;
  double yaw_rate_min = 0.0;  ///< deg/s, magnitude; sign is random per segment
  double yaw_rate_max = 12.0;
  int segment_min = 20;  ///< frames per constant-curvature segment
  int segment_max = 60;
  double fps = 10.0;
  double altitude = 25.0;        ///< m above the ground plane
  double climb_amplitude = 2.0;  ///< m, vertical sinusoid
  double climb_period = 20.0;    ///< s
  double texture_noise = 0.02;   ///< per-pixel noise std
  double landmark_strength = 0.25;
  /// > 0 flies laps of a closed loop of this mean radius (m) instead of
  /// free segments; yaw follows the loop and the yaw-rate range is unused.
  double circuit_radius = 0.0;
  int image_height = 64;
  int image_width = 64;
  std::uint64_t seed = 1;

  /// Throws ConfigError.
  void validate() const;
  bool operator==(const SynthParams&) const = default;
};

SequenceRecord synth_sequence(const SynthParams& p, const std::string& id = "synth");

/// key=value manifest of the parameters that generated a dataset.
void write_manifest(const std::string& path, const SynthParams& p, const std::string& id);
SynthParams read_manifest(const std::string& path, std::string* id = nullptr);

/// One K-frame window: frame indices into the sequence plus CTC targets.
struct WindowSample {
  std::size_t start = 0;
  std::vector<std::size_t> indices;
  WindowTarget target;
};

/// Windows starting at 0, stride, 2*stride, ...; count = floor((len-K)/stride)+1.
class WindowStream {
 public:
  WindowStream(const SequenceRecord& seq, int K, int stride, const PairSpec& spec);

  std::size_t size() const { return count_; }
  WindowSample operator[](std::size_t i) const;

  class iterator {
   public:
    iterator(const WindowStream* s, std::size_t i) : s_(s), i_(i) {}
    WindowSample operator*() const { return (*s_)[i_]; }
    iterator& operator++() {
      ++i_;
      return *this;
    }
    bool operator!=(const iterator& o) const { return i_ != o.i_; }

   private:
    const WindowStream* s_;
    std::size_t i_;
  };
  iterator begin() const { return {this, 0}; }
  iterator end() const { return {this, count_}; }

 private:
  const SequenceRecord& seq_;
  int K_;
  int stride_;
  PairSpec spec_;
  std::size_t count_;
};

WindowStream window_iter(const SequenceRecord& seq, int K, int stride, const PairSpec& spec);

/// Contiguous sub-sequence [begin, end).
SequenceRecord slice(const SequenceRecord& seq, std::size_t begin, std::size_t end);

}  // namespace ctcvo
