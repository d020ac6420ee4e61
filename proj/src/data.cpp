#include "pfv2/data.hpp"

#include <cmath>
#include <iomanip>
#include <numbers>

#include "json.hpp"

#include "binio.hpp"
#include "pfv2/model.hpp"
#include "pfv2/rng.hpp"

namespace pfv2 {

// ---------------------------------------------------------------------------
// Skeleton

std::vector<std::size_t> SkeletonMeta::mirror_map() const {
  const std::size_t J = joints();
  std::vector<std::size_t> map(J);
  for (std::size_t j = 0; j < J; ++j) map[j] = j;
  std::vector<bool> seen(J, false);
  for (const auto& [a, b] : mirror_pairs) {
    if (a >= J || b >= J) {
      throw std::invalid_argument("mirror pair (" + std::to_string(a) + ", " + std::to_string(b) +
                                  ") references a joint outside [0, " + std::to_string(J) + ")");
    }
    if (a == b || seen[a] || seen[b]) {
      throw std::invalid_argument("mirror pair (" + std::to_string(a) + ", " + std::to_string(b) +
                                  ") is not part of an involution");
    }
    if (a == root || b == root) throw std::invalid_argument("mirror pairs must leave the root fixed");
    seen[a] = seen[b] = true;
    map[a] = b;
    map[b] = a;
  }
  return map;
}

std::size_t SkeletonMeta::joint_index(const std::string& name) const {
  for (std::size_t j = 0; j < joint_names.size(); ++j) {
    if (joint_names[j] == name) return j;
  }
  throw std::invalid_argument("unknown joint '" + name + "'");
}

void SkeletonMeta::validate() const {
  const std::size_t J = joints();
  if (J == 0) throw std::invalid_argument("skeleton has no joints");
  if (parents.size() != J) throw std::invalid_argument("skeleton parents/joint_names length mismatch");
  if (root >= J) throw std::invalid_argument("skeleton root out of range");
  for (std::size_t j = 0; j < J; ++j) {
    if (j == root) {
      if (parents[j] != -1) throw std::invalid_argument("skeleton root must have parent -1");
    } else if (parents[j] < 0 || static_cast<std::size_t>(parents[j]) >= J) {
      throw std::invalid_argument("joint " + std::to_string(j) + " has an invalid parent");
    }
  }
  mirror_map();
}

namespace {

struct Bone {
  double length;  // world units (mm)
  double rest_x;  // in-plane rest direction, unit length
  double rest_y;
};

struct SkeletonModel {
  std::shared_ptr<const SkeletonMeta> meta;
  std::vector<Bone> bones;  // indexed by child joint; root entry unused
};

SkeletonModel human36m_model() {
  auto meta = std::make_shared<SkeletonMeta>();
  meta->joint_names = {"hip",        "r_hip",      "r_knee",  "r_foot",  "l_hip",   "l_knee",
                       "l_foot",     "spine",      "thorax",  "neck",    "head",    "l_shoulder",
                       "l_elbow",    "l_wrist",    "r_shoulder", "r_elbow", "r_wrist"};
  meta->parents = {-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15};
  meta->mirror_pairs = {{1, 4}, {2, 5}, {3, 6}, {11, 14}, {12, 15}, {13, 16}};
  meta->root = 0;
  const double a = 0.3 / std::sqrt(1.09), d = -1.0 / std::sqrt(1.09);
  std::vector<Bone> bones = {
      {0, 0, 0},        {130, -1, 0}, {440, 0, -1}, {440, 0, -1}, {130, 1, 0},  {440, 0, -1},
      {440, 0, -1},     {230, 0, 1},  {250, 0, 1},  {110, 0, 1},  {115, 0, 1},  {150, 1, 0},
      {280, a, d},      {250, a, d},  {150, -1, 0}, {280, -a, d}, {250, -a, d},
  };
  return {meta, bones};
}

// Root with pairs (1, 2), (3, 4), ... hanging as mirrored chains; an unpaired
// last joint points up from the root.
SkeletonModel chain_model(std::size_t J) {
  auto meta = std::make_shared<SkeletonMeta>();
  meta->root = 0;
  meta->joint_names.push_back("root");
  meta->parents.push_back(-1);
  std::vector<Bone> bones = {{0, 0, 0}};
  const std::size_t pairs = (J - 1) / 2;
  for (std::size_t k = 0; k < pairs; ++k) {
    const std::size_t left = 2 * k + 1, right = 2 * k + 2;
    meta->joint_names.push_back("l_" + std::to_string(k));
    meta->joint_names.push_back("r_" + std::to_string(k));
    meta->parents.push_back(k == 0 ? 0 : static_cast<int>(left - 2));
    meta->parents.push_back(k == 0 ? 0 : static_cast<int>(right - 2));
    meta->mirror_pairs.emplace_back(left, right);
    const double angle = -0.25 * std::numbers::pi * static_cast<double>(k + 1) / static_cast<double>(pairs);
    bones.push_back({200, std::cos(angle), std::sin(angle)});
    bones.push_back({200, -std::cos(angle), std::sin(angle)});
  }
  if (J % 2 == 0) {
    meta->joint_names.push_back("top");
    meta->parents.push_back(0);
    bones.push_back({200, 0, 1});
  }
  return {meta, bones};
}

SkeletonModel skeleton_model(std::size_t J) { return J == 17 ? human36m_model() : chain_model(J); }

struct Sinusoids {
  std::vector<double> amplitude, period, phase;

  double operator()(double t) const {
    double v = 0.0;
    for (std::size_t k = 0; k < amplitude.size(); ++k) {
      v += amplitude[k] * std::sin(2.0 * std::numbers::pi * t / period[k] + phase[k]);
    }
    return v;
  }
};

Sinusoids draw_sinusoids(Rng& rng, const MotionOptions& o, double gain) {
  const std::size_t extra = o.max_components > o.min_components ? o.max_components - o.min_components : 0;
  const std::size_t count = o.min_components + rng.below(extra + 1);
  Sinusoids s;
  for (std::size_t k = 0; k < count; ++k) {
    const bool slow = k == 0;
    const double amp = slow ? o.slow_amplitude : o.fast_amplitude * std::pow(o.fast_decay, static_cast<double>(k - 1));
    s.amplitude.push_back(gain * o.amplitude_scale * amp * rng.uniform(0.5, 1.0));
    s.period.push_back(slow ? rng.uniform(o.slow_period_min, o.slow_period_max)
                            : rng.uniform(o.fast_period_min, o.fast_period_max));
    s.phase.push_back(rng.uniform(0.0, 2.0 * std::numbers::pi));
  }
  return s;
}

constexpr double kTiltGain = 0.35;

SkeletonSample generate_one(const SkeletonModel& model, std::size_t F, Rng rng, const MotionOptions& o) {
  const SkeletonMeta& meta = *model.meta;
  const std::size_t J = meta.joints();
  std::vector<Sinusoids> swing(J), tilt(J);
  std::vector<double> tilt_offset(J, 0.0);
  for (std::size_t j = 0; j < J; ++j) {
    if (j == meta.root) continue;
    swing[j] = draw_sinusoids(rng, o, 1.0);
    tilt[j] = draw_sinusoids(rng, o, kTiltGain);
    tilt_offset[j] = rng.uniform(0.35, 0.75);
  }
  const double tx = rng.uniform(-o.translation_range, o.translation_range);
  const double ty = rng.uniform(-o.translation_range, o.translation_range);

  SkeletonSample s;
  s.frames = F;
  s.joints = J;
  s.meta = model.meta;
  s.seq2d.assign(F * J * 2, 0.0);
  s.pose3d.assign(J * 3, 0.0);
  const std::size_t center = center_index(F);
  std::vector<double> pos(J * 3), abs_swing(J);
  for (std::size_t f = 0; f < F; ++f) {
    const double t = static_cast<double>(f);
    pos[meta.root * 3 + 0] = pos[meta.root * 3 + 1] = pos[meta.root * 3 + 2] = 0.0;
    abs_swing[meta.root] = 0.0;
    // Parents precede children in both built-in layouts.
    for (std::size_t j = 0; j < J; ++j) {
      if (j == meta.root) continue;
      const auto p = static_cast<std::size_t>(meta.parents[j]);
      abs_swing[j] = abs_swing[p] + swing[j](t);
      const double alpha = tilt_offset[j] + tilt[j](t);
      const Bone& b = model.bones[j];
      const double cb = std::cos(abs_swing[j]), sb = std::sin(abs_swing[j]);
      const double dx = std::cos(alpha) * (cb * b.rest_x - sb * b.rest_y);
      const double dy = std::cos(alpha) * (sb * b.rest_x + cb * b.rest_y);
      const double dz = std::sin(alpha);
      pos[j * 3 + 0] = pos[p * 3 + 0] + b.length * dx;
      pos[j * 3 + 1] = pos[p * 3 + 1] + b.length * dy;
      pos[j * 3 + 2] = pos[p * 3 + 2] + b.length * dz;
    }
    for (std::size_t j = 0; j < J; ++j) {
      s.at2d(f, j, 0) = pos[j * 3 + 0] * kWorldToNormalized + tx;
      s.at2d(f, j, 1) = pos[j * 3 + 1] * kWorldToNormalized + ty;
    }
    if (f == center) s.pose3d = pos;
  }
  if (o.input_noise > 0.0) {
    for (double& v : s.seq2d) v += o.input_noise * rng.normal();
  }
  return s;
}

}  // namespace

std::shared_ptr<const SkeletonMeta> default_skeleton(std::size_t joints) {
  if (joints == 0) throw std::invalid_argument("default_skeleton: J must be positive");
  return skeleton_model(joints).meta;
}

// ---------------------------------------------------------------------------
// Samples

std::vector<double> SkeletonSample::trajectory(std::size_t joint, std::size_t axis) const {
  if (joint >= joints || axis > 1) throw std::out_of_range("trajectory: joint/axis out of range");
  std::vector<double> out(frames);
  for (std::size_t f = 0; f < frames; ++f) out[f] = at2d(f, joint, axis);
  return out;
}

void SkeletonSample::validate() const {
  if (frames == 0 || joints == 0) throw std::invalid_argument("sample: F and J must be positive");
  if (seq2d.size() != frames * joints * 2) throw std::invalid_argument("sample: seq2d size mismatch");
  if (pose3d.size() != joints * 3) throw std::invalid_argument("sample: pose3d size mismatch");
  if (meta && meta->joints() != joints) throw std::invalid_argument("sample: skeleton joint count mismatch");
  for (double v : seq2d)
    if (!std::isfinite(v)) throw std::invalid_argument("sample: non-finite seq2d value");
  for (double v : pose3d)
    if (!std::isfinite(v)) throw std::invalid_argument("sample: non-finite pose3d value");
}

bool operator==(const SkeletonSample& a, const SkeletonSample& b) {
  const bool same_meta = a.meta == b.meta || (a.meta && b.meta && *a.meta == *b.meta);
  return a.frames == b.frames && a.joints == b.joints && a.seq2d == b.seq2d && a.pose3d == b.pose3d && same_meta;
}

std::vector<SkeletonSample> generate_synthetic(std::size_t count, std::size_t frames, std::size_t joints,
                                               std::uint64_t seed, const MotionOptions& options) {
  if (frames == 0 || joints == 0) throw std::invalid_argument("generate_synthetic: F and J must be positive");
  const SkeletonModel model = skeleton_model(joints);
  Rng root(seed);
  std::vector<SkeletonSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_one(model, frames, root.fork(i), options));
  return out;
}

SkeletonSample add_noise(const SkeletonSample& sample, const NoiseSpec& spec) {
  if (!(spec.sigma >= 0.0)) throw std::invalid_argument("add_noise: sigma must be >= 0");
  std::optional<std::size_t> target;
  if (spec.joint) {
    if (!sample.meta) throw std::invalid_argument("add_noise: sample has no skeleton to resolve '" + *spec.joint + "'");
    target = sample.meta->joint_index(*spec.joint);
  }
  SkeletonSample out = sample;
  if (spec.sigma == 0.0) return out;
  Rng rng(spec.seed);
  for (std::size_t f = 0; f < out.frames; ++f) {
    for (std::size_t j = 0; j < out.joints; ++j) {
      if (target && j != *target) continue;
      out.at2d(f, j, 0) += spec.sigma * rng.normal();
      out.at2d(f, j, 1) += spec.sigma * rng.normal();
    }
  }
  return out;
}

SkeletonSample horizontal_flip(const SkeletonSample& sample) {
  if (!sample.meta) throw std::invalid_argument("horizontal_flip: sample has no mirror map");
  const std::vector<std::size_t> map = sample.meta->mirror_map();
  if (map.size() != sample.joints) throw std::invalid_argument("horizontal_flip: mirror map size mismatch");
  SkeletonSample out = sample;
  for (std::size_t f = 0; f < sample.frames; ++f) {
    for (std::size_t j = 0; j < sample.joints; ++j) {
      out.at2d(f, map[j], 0) = -sample.at2d(f, j, 0);
      out.at2d(f, map[j], 1) = sample.at2d(f, j, 1);
    }
  }
  for (std::size_t j = 0; j < sample.joints; ++j) {
    out.pose3d[map[j] * 3 + 0] = -sample.pose3d[j * 3 + 0];
    out.pose3d[map[j] * 3 + 1] = sample.pose3d[j * 3 + 1];
    out.pose3d[map[j] * 3 + 2] = sample.pose3d[j * 3 + 2];
  }
  return out;
}

SkeletonSample center_crop(const SkeletonSample& sample, std::size_t frames) {
  const std::vector<std::size_t> idx = central_frame_indices(sample.frames, frames);
  SkeletonSample out = sample;
  out.frames = frames;
  out.seq2d.assign(sample.seq2d.begin() + static_cast<std::ptrdiff_t>(idx.front() * sample.joints * 2),
                   sample.seq2d.begin() + static_cast<std::ptrdiff_t>((idx.back() + 1) * sample.joints * 2));
  return out;
}

// ---------------------------------------------------------------------------
// PFDS

namespace {

constexpr char kMagic[4] = {'P', 'F', 'D', 'S'};
constexpr std::uint32_t kVersion = 1;

nlohmann::json meta_to_json(const SkeletonMeta& m) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& [a, b] : m.mirror_pairs) pairs.push_back({a, b});
  return {{"joint_names", m.joint_names}, {"mirror_pairs", pairs}, {"root", m.root}, {"parents", m.parents}};
}

std::shared_ptr<const SkeletonMeta> meta_from_json(const std::string& text) {
  auto m = std::make_shared<SkeletonMeta>();
  try {
    const nlohmann::json j = nlohmann::json::parse(text);
    m->joint_names = j.at("joint_names").get<std::vector<std::string>>();
    for (const auto& p : j.at("mirror_pairs")) m->mirror_pairs.emplace_back(p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>());
    m->root = j.at("root").get<std::size_t>();
    m->parents = j.at("parents").get<std::vector<int>>();
    m->validate();
  } catch (const std::exception& e) {
    throw DatasetHeaderError(std::string("PFDS: invalid skeleton metadata: ") + e.what());
  }
  return m;
}

}  // namespace

DatasetTruncatedError::DatasetTruncatedError(std::size_t offset, std::size_t wanted)
    : DatasetError("PFDS: truncated at byte offset " + std::to_string(offset) + " (needed " + std::to_string(wanted) +
                   " more bytes)"),
      offset_(offset) {}

std::vector<unsigned char> encode_samples(const std::vector<SkeletonSample>& samples) {
  binio::Writer w;
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(samples.size()));
  if (samples.empty()) {
    w.u32(0);
    w.u32(0);
    w.u32(0);
    return std::move(w.buffer());
  }
  const SkeletonSample& first = samples.front();
  if (!first.meta) throw std::invalid_argument("save_samples: sample 0 has no skeleton metadata");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const SkeletonSample& s = samples[i];
    s.validate();
    if (s.frames != first.frames || s.joints != first.joints || !s.meta || *s.meta != *first.meta) {
      throw std::invalid_argument("save_samples: sample " + std::to_string(i) + " differs in shape or skeleton");
    }
  }
  const std::string meta = meta_to_json(*first.meta).dump();
  w.u32(static_cast<std::uint32_t>(first.frames));
  w.u32(static_cast<std::uint32_t>(first.joints));
  w.u32(static_cast<std::uint32_t>(meta.size()));
  w.str(meta);
  for (const SkeletonSample& s : samples) {
    w.f64s(s.seq2d);
    w.f64s(s.pose3d);
  }
  return std::move(w.buffer());
}

std::vector<SkeletonSample> decode_samples(const std::vector<unsigned char>& bytes) {
  binio::Reader r(bytes, [](std::size_t offset, std::size_t wanted) -> void {
    throw DatasetTruncatedError(offset, wanted);
  });
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw DatasetHeaderError("PFDS: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kVersion) throw DatasetHeaderError("PFDS: unsupported version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  const std::uint32_t F = r.u32();
  const std::uint32_t J = r.u32();
  const std::uint32_t meta_len = r.u32();
  std::vector<SkeletonSample> out;
  if (count == 0) {
    if (r.remaining() != meta_len) throw DatasetShapeError("PFDS: empty dataset carries a payload");
    return out;
  }
  const std::string meta_text = r.str(meta_len);
  auto meta = meta_from_json(meta_text);
  if (F == 0 || J == 0) throw DatasetShapeError("PFDS: F and J must be positive");
  if (meta->joints() != J) {
    throw DatasetShapeError("PFDS: header J = " + std::to_string(J) + " but skeleton has " +
                            std::to_string(meta->joints()) + " joints");
  }
  const std::size_t per_sample = (static_cast<std::size_t>(F) * J * 2 + static_cast<std::size_t>(J) * 3) * 8;
  if (r.remaining() > per_sample * count) {
    throw DatasetShapeError("PFDS: " + std::to_string(r.remaining() - per_sample * count) +
                            " bytes beyond the declared " + std::to_string(count) + " samples");
  }
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    SkeletonSample s;
    s.frames = F;
    s.joints = J;
    s.meta = meta;
    s.seq2d.resize(static_cast<std::size_t>(F) * J * 2);
    s.pose3d.resize(static_cast<std::size_t>(J) * 3);
    const std::size_t start = r.offset();
    r.bytes(s.seq2d.data(), s.seq2d.size() * 8);
    r.bytes(s.pose3d.data(), s.pose3d.size() * 8);
    for (std::size_t k = 0; k < s.seq2d.size() + s.pose3d.size(); ++k) {
      const double v = k < s.seq2d.size() ? s.seq2d[k] : s.pose3d[k - s.seq2d.size()];
      if (!std::isfinite(v)) {
        throw DatasetValueError("PFDS: non-finite value in sample " + std::to_string(i) + " at byte offset " +
                                std::to_string(start + k * 8));
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

void save_samples(const std::vector<SkeletonSample>& samples, const std::filesystem::path& path) {
  binio::write_file(path, encode_samples(samples));
}

std::vector<SkeletonSample> load_samples(const std::filesystem::path& path) {
  return decode_samples(binio::read_file(path));
}

void write_sample_csv(const SkeletonSample& sample, std::ostream& out) {
  out << "frame,joint,x,y\n" << std::setprecision(17);
  for (std::size_t f = 0; f < sample.frames; ++f) {
    for (std::size_t j = 0; j < sample.joints; ++j) {
      out << f << ',' << j << ',' << sample.at2d(f, j, 0) << ',' << sample.at2d(f, j, 1) << '\n';
    }
  }
}

}  // namespace pfv2
