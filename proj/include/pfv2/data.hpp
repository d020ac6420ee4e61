#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pfv2 {

/// Normalized image units per pixel-equivalent (1 px == 1/500).
inline constexpr double kPixelToNormalized = 1.0 / 500.0;

/// Normalized image units per world unit (world mm / 1000).
inline constexpr double kWorldToNormalized = 1.0 / 1000.0;

struct SkeletonMeta {
  std::vector<std::string> joint_names;
  /// Left/right pairs; every joint appears in at most one pair.
  std::vector<std::pair<std::size_t, std::size_t>> mirror_pairs;
  std::size_t root = 0;
  /// Kinematic parent per joint, -1 for the root.
  std::vector<int> parents;

  std::size_t joints() const { return joint_names.size(); }

  /// Permutation that swaps every mirror pair. Throws std::invalid_argument
  /// when the pairs do not form an involution that fixes the root.
  std::vector<std::size_t> mirror_map() const;

  /// Throws std::invalid_argument naming the unknown joint.
  std::size_t joint_index(const std::string& name) const;

  /// Full consistency check of names, parents and mirror pairs.
  void validate() const;

  bool operator==(const SkeletonMeta&) const = default;
};

/// 17-joint Human3.6M-style layout for J = 17; a procedural chain otherwise.
std::shared_ptr<const SkeletonMeta> default_skeleton(std::size_t joints);

struct SkeletonSample {
  std::size_t frames = 0;
  std::size_t joints = 0;
  std::vector<double> seq2d;   // [F, J, 2], normalized image coordinates
  std::vector<double> pose3d;  // [J, 3], central frame, root-relative world units
  std::shared_ptr<const SkeletonMeta> meta;

  double& at2d(std::size_t f, std::size_t j, std::size_t axis) { return seq2d[(f * joints + j) * 2 + axis]; }
  double at2d(std::size_t f, std::size_t j, std::size_t axis) const { return seq2d[(f * joints + j) * 2 + axis]; }

  /// One joint's coordinate over all frames.
  std::vector<double> trajectory(std::size_t joint, std::size_t axis) const;

  /// Throws std::invalid_argument on shape or finiteness violations.
  void validate() const;
};

bool operator==(const SkeletonSample& a, const SkeletonSample& b);

/// Motion model controls. Each bone angle is a sum of sinusoids: one slow
/// component plus fast components of geometrically decaying amplitude.
struct MotionOptions {
  /// Multiplies every sinusoid amplitude; 0 gives a static pose.
  double amplitude_scale = 1.0;
  double slow_period_min = 150.0;  // frames
  double slow_period_max = 320.0;
  double slow_amplitude = 0.6;     // radians
  double fast_period_min = 6.0;
  double fast_period_max = 24.0;
  double fast_amplitude = 0.05;
  double fast_decay = 0.6;
  std::size_t min_components = 2;
  std::size_t max_components = 4;
  /// Per-sequence translation is uniform in [-t, t] on both image axes.
  double translation_range = 0.2;
  /// Detector-like jitter added to the 2D input (normalized units); 0 disables.
  double input_noise = 0.0;
};

/// Synthetic sequences: seeded sinusoidal joint angles, forward kinematics,
/// orthographic projection plus per-sequence translation. Ground truth is the
/// root-relative 3D pose at center_index(F).
std::vector<SkeletonSample> generate_synthetic(std::size_t count, std::size_t frames, std::size_t joints,
                                               std::uint64_t seed, const MotionOptions& options = {});

struct NoiseSpec {
  double sigma = 0.0;
  /// Target joint name; std::nullopt corrupts every joint.
  std::optional<std::string> joint;
  std::uint64_t seed = 0;
};

SkeletonSample add_noise(const SkeletonSample& sample, const NoiseSpec& spec);

/// Negates x in seq2d and pose3d, then swaps every mirror pair.
SkeletonSample horizontal_flip(const SkeletonSample& sample);

/// Keeps the `frames`-long window centered on center_index(F), so the
/// supervised frame stays the center. Requires frames odd and <= F.
SkeletonSample center_crop(const SkeletonSample& sample, std::size_t frames);

// ---------------------------------------------------------------------------
// PFDS files

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DatasetHeaderError : public DatasetError {
 public:
  using DatasetError::DatasetError;
};

class DatasetShapeError : public DatasetError {
 public:
  using DatasetError::DatasetError;
};

class DatasetValueError : public DatasetError {
 public:
  using DatasetError::DatasetError;
};

class DatasetTruncatedError : public DatasetError {
 public:
  DatasetTruncatedError(std::size_t offset, std::size_t wanted);
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// "PFDS": magic, u32 version, u32 count, u32 F, u32 J, u32 meta length,
/// skeleton JSON, then per sample F*J*2 + J*3 f64 values (LE).
std::vector<unsigned char> encode_samples(const std::vector<SkeletonSample>& samples);
std::vector<SkeletonSample> decode_samples(const std::vector<unsigned char>& bytes);

void save_samples(const std::vector<SkeletonSample>& samples, const std::filesystem::path& path);
std::vector<SkeletonSample> load_samples(const std::filesystem::path& path);

/// CSV with header `frame,joint,x,y`.
void write_sample_csv(const SkeletonSample& sample, std::ostream& out);

}  // namespace pfv2
