#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <vector>

#include "CLI11.hpp"
#include "pfv2/bench.hpp"
#include "pfv2/dct.hpp"
#include "pfv2/params.hpp"

namespace pfv2::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::uint64_t env_seed() {
  const char* v = std::getenv("PFV2_SEED");
  if (v == nullptr || *v == '\0') return 0;
  std::uint64_t seed = 0;
  const char* end = v + std::char_traits<char>::length(v);
  const auto [ptr, ec] = std::from_chars(v, end, seed);
  if (ec != std::errc() || ptr != end) throw ConfigError(std::string("PFV2_SEED is not an unsigned integer: ") + v);
  return seed;
}

std::string describe(const json& j) {
  if (j.is_null()) return "null";
  if (j.is_boolean()) return "boolean";
  if (j.is_number_integer()) return "integer";
  if (j.is_number()) return "number";
  if (j.is_string()) return "string";
  if (j.is_array()) return "array";
  return "object";
}

bool compatible(const json& base, const json& value) {
  if (base.is_null()) return value.is_null() || value.is_string();
  if (base.is_string()) return value.is_string() || value.is_null();
  if (base.is_boolean()) return value.is_boolean();
  if (base.is_number_integer()) return value.is_number_unsigned() || (value.is_number_integer() && value.get<std::int64_t>() >= 0);
  if (base.is_number()) return value.is_number();
  return false;
}

std::size_t as_size(const json& j, const char* key) {
  if (!j.contains(key)) throw ConfigError(std::string("missing key '") + key + "'");
  const json& v = j.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
    throw ConfigError(std::string("'") + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

double as_double(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_number()) throw ConfigError(std::string("'") + key + "' must be a number");
  return j.at(key).get<double>();
}

std::vector<double> parse_doubles(const std::string& list) {
  std::vector<double> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("not a number: '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

std::vector<std::size_t> parse_sizes(const std::string& list) {
  std::vector<std::size_t> out;
  for (double v : parse_doubles(list)) {
    if (v < 0 || v != static_cast<double>(static_cast<std::size_t>(v))) {
      throw ConfigError("not a non-negative integer in '" + list + "'");
    }
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

template <class Fn>
void write_stream(const fs::path& path, Fn&& fn) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  fn(out);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

// Options shared by every subcommand.
struct Common {
  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "JSON config file");
  sub->add_option("--out-dir", c.out_dir, "Output directory")->capture_default_str();
  sub->add_option("--seed", c.seed, "Run seed (overrides config and PFV2_SEED)");
  sub->add_option("--set", c.sets, "Override a config value, e.g. --set model.F=27")->allow_extra_args(false);
}

json resolve(const Common& c, const std::vector<std::pair<std::string, json>>& flags) {
  json config = default_config();
  if (!c.config_path.empty()) merge_config(config, read_json(c.config_path));
  for (const std::string& s : c.sets) apply_override(config, s);
  for (const auto& [key, value] : flags) apply_override(config, key + "=" + value.dump());
  if (c.seed) config["seed"] = *c.seed;
  return config;
}

fs::path prepare_out(const Common& c) {
  const fs::path dir(c.out_dir);
  fs::create_directories(dir);
  return dir;
}

void write_resolved(const fs::path& dir, const json& config) { write_text(dir / "resolved_config.json", config.dump(2) + "\n"); }

std::vector<SkeletonSample> dataset_from(const std::string& path, const json& config, std::size_t frames,
                                         std::size_t joints, std::uint64_t seed) {
  if (!path.empty()) return load_samples(path);
  return generate_synthetic(as_size(config.at("data"), "count"), frames, joints, seed, motion_from_json(config));
}

TrainedModel load_model(const fs::path& dir) {
  if (!fs::exists(dir / "model_config.json")) throw std::runtime_error("no checkpoint in " + dir.string());
  const json meta = read_json(dir / "model_config.json");
  TrainedModel m;
  m.config = model_config_from_json(meta.at("model"));
  m.variant = variant_from_json(meta.at("model"));
  m.id = meta.value("id", std::string(variant_name(m.variant)));
  m.epochs_trained = as_size(meta, "epochs_trained");
  m.params = load_checkpoint(dir / "model.pfv2");
  return m;
}

std::size_t resolve_joint(const SkeletonSample& s, const std::string& joint) {
  std::size_t idx = 0;
  const auto [ptr, ec] = std::from_chars(joint.data(), joint.data() + joint.size(), idx);
  if (ec == std::errc() && ptr == joint.data() + joint.size()) {
    if (idx >= s.joints) throw ConfigError("joint index out of range: " + joint);
    return idx;
  }
  if (!s.meta) throw ConfigError("sample has no skeleton metadata; give a joint index");
  try {
    return s.meta->joint_index(joint);
  } catch (const std::invalid_argument&) {
    throw ConfigError("unknown joint: " + joint);
  }
}

}  // namespace

json default_config() {
  return {
      {"seed", env_seed()},
      {"model",
       {{"variant", "v2"},
        {"J", 17},
        {"F", 81},
        {"f", 3},
        {"n", 3},
        {"c", 32},
        {"L_spatial", 4},
        {"L_fusion", 4},
        {"heads_spatial", 8},
        {"heads_fusion", 8},
        {"mlp_ratio", 2.0},
        {"output_scale", 1000.0}}},
      {"schedule",
       {{"epochs", 80},
        {"lr0", 8e-4},
        {"lr_decay", 0.99},
        {"weight_decay", 0.1},
        {"batch_size", 32},
        {"flip_augment", true}}},
      {"noise", {{"sigma", 0.0}, {"joint", nullptr}, {"seed", 0}}},
      {"data", {{"count", 256}, {"input_noise", 0.0}, {"amplitude_scale", 1.0}}},
  };
}

void merge_config(json& base, const json& overlay, const std::string& path) {
  if (!overlay.is_object()) throw ConfigError("config" + (path.empty() ? "" : " section '" + path + "'") + " must be an object");
  for (const auto& [key, value] : overlay.items()) {
    const std::string full = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + full + "'");
    json& target = base[key];
    if (target.is_object()) {
      merge_config(target, value, full);
    } else if (!compatible(target, value)) {
      throw ConfigError("config key '" + full + "' expects " + describe(target) + ", got " + describe(value));
    } else {
      target = value;
    }
  }
}

void apply_override(json& config, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  std::vector<std::string> parts;
  std::stringstream ss(key);
  std::string part;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  json overlay = value;
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) overlay = json{{*it, overlay}};
  merge_config(config, overlay);
}

ModelConfig model_config_from_json(const json& m) {
  ModelConfig c;
  c.joints = as_size(m, "J");
  c.frames = as_size(m, "F");
  c.central_frames = as_size(m, "f");
  c.coeffs = as_size(m, "n");
  c.embed_dim = as_size(m, "c");
  c.spatial_layers = as_size(m, "L_spatial");
  c.fusion_layers = as_size(m, "L_fusion");
  c.heads_spatial = as_size(m, "heads_spatial");
  c.heads_fusion = as_size(m, "heads_fusion");
  c.mlp_ratio = as_double(m, "mlp_ratio");
  c.output_scale = as_double(m, "output_scale");
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

Variant variant_from_json(const json& m) {
  if (!m.contains("variant") || !m.at("variant").is_string()) throw ConfigError("'variant' must be a string");
  try {
    return parse_variant(m.at("variant").get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

json model_config_to_json(const ModelConfig& c, Variant variant) {
  return {{"variant", std::string(variant_name(variant))},
          {"J", c.joints},
          {"F", c.frames},
          {"f", c.central_frames},
          {"n", c.coeffs},
          {"c", c.embed_dim},
          {"L_spatial", c.spatial_layers},
          {"L_fusion", c.fusion_layers},
          {"heads_spatial", c.heads_spatial},
          {"heads_fusion", c.heads_fusion},
          {"mlp_ratio", c.mlp_ratio},
          {"output_scale", c.output_scale}};
}

TrainSchedule schedule_from_json(const json& config) {
  const json& s = config.at("schedule");
  TrainSchedule t;
  t.epochs = as_size(s, "epochs");
  t.lr0 = as_double(s, "lr0");
  t.lr_decay = as_double(s, "lr_decay");
  t.weight_decay = as_double(s, "weight_decay");
  t.batch_size = as_size(s, "batch_size");
  t.flip_augment = s.at("flip_augment").get<bool>();
  t.seed = config.at("seed").get<std::uint64_t>();
  if (t.batch_size == 0) throw ConfigError("'batch_size' must be positive");
  return t;
}

MotionOptions motion_from_json(const json& config) {
  const json& d = config.at("data");
  MotionOptions o;
  o.amplitude_scale = as_double(d, "amplitude_scale");
  o.input_noise = as_double(d, "input_noise");
  if (o.input_noise < 0) throw ConfigError("'input_noise' must be non-negative");
  return o;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Frequency-domain 2D-to-3D pose lifting", "pfv2"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand all help");

  Common common;
  std::string data_path, variant, checkpoint, sigmas, input, joint, axis = "x", keep = "3,9,27";
  std::vector<std::string> checkpoints;
  std::optional<std::size_t> epochs, count;
  std::size_t sample = 0, repeats = 30;
  bool flip_test = false;

  CLI::App* gen = app.add_subcommand("gen-data", "Generate a synthetic PFDS dataset");
  add_common(gen, common);
  gen->add_option("--count", count, "Number of sequences (data.count)");

  CLI::App* tr = app.add_subcommand("train", "Train a model");
  add_common(tr, common);
  tr->add_option("--data", data_path, "PFDS dataset; generated from the data section when absent");
  tr->add_option("--epochs", epochs, "Training epochs (schedule.epochs)");
  tr->add_option("--variant", variant, "v2, v1_temporal or dct_only_baseline");

  CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(ev, common);
  ev->add_option("--checkpoint", checkpoint, "Checkpoint directory written by train")->required();
  ev->add_option("--data", data_path, "PFDS dataset; generated with seed+1 when absent");
  ev->add_flag("--flip-test", flip_test, "Average with the mirrored prediction");

  CLI::App* bf = app.add_subcommand("bench-flops", "Analytic FLOPs breakdown");
  add_common(bf, common);
  bf->add_option("--variant", variant, "v2, v1_temporal or dct_only_baseline");

  CLI::App* br = app.add_subcommand("bench-robustness", "MPJPE under input noise");
  add_common(br, common);
  br->add_option("--checkpoint", checkpoints, "Checkpoint directory (repeatable)")->required();
  br->add_option("--data", data_path, "PFDS dataset; generated with seed+1 when absent");
  br->add_option("--sigmas", sigmas, "Comma-separated noise levels in pixels (default 0..10)");
  br->add_flag("--flip-test", flip_test, "Average with the mirrored prediction");

  CLI::App* bs = app.add_subcommand("bench-speed", "Latency and accuracy per checkpoint");
  add_common(bs, common);
  bs->add_option("--checkpoint", checkpoints, "Checkpoint directory (repeatable)")->required();
  bs->add_option("--data", data_path, "PFDS dataset; generated with seed+1 when absent");
  bs->add_option("--repeats", repeats, "Timed forward passes per model (>= 10)")->capture_default_str();

  CLI::App* di = app.add_subcommand("dct-inspect", "Low-pass reconstructions of one trajectory");
  add_common(di, common);
  di->add_option("--input", input, "PFDS dataset")->required();
  di->add_option("--sample", sample, "Sample index")->capture_default_str();
  di->add_option("--joint", joint, "Joint index or name")->required();
  di->add_option("--axis", axis, "x or y")->check(CLI::IsMember({"x", "y"}))->capture_default_str();
  di->add_option("--keep", keep, "Comma-separated coefficient counts")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }

  CLI::App* active = app.get_subcommands().front();
  try {
    std::vector<std::pair<std::string, json>> flags;
    if (count) flags.emplace_back("data.count", *count);
    if (epochs) flags.emplace_back("schedule.epochs", *epochs);
    if (!variant.empty()) flags.emplace_back("model.variant", variant);
    const json config = resolve(common, flags);
    const std::uint64_t seed = config.at("seed").get<std::uint64_t>();

    if (active == gen) {
      const ModelConfig mc = model_config_from_json(config.at("model"));
      const auto samples = dataset_from("", config, mc.frames, mc.joints, seed);
      const fs::path dir = prepare_out(common);
      save_samples(samples, dir / "dataset.pfds");
      write_resolved(dir, config);
      out << "gen-data: " << samples.size() << " sequences (F=" << mc.frames << ", J=" << mc.joints << ") -> "
          << (dir / "dataset.pfds").string() << "\n";
      return 0;
    }

    if (active == tr) {
      const ModelConfig mc = model_config_from_json(config.at("model"));
      const Variant v = variant_from_json(config.at("model"));
      const TrainSchedule schedule = schedule_from_json(config);
      const auto samples = dataset_from(data_path, config, mc.frames, mc.joints, seed);
      ParamStore params = init_params(mc, v, seed);
      const auto losses = train(params, samples, schedule, mc, v);
      const fs::path dir = prepare_out(common);
      save_checkpoint(params, dir / "model.pfv2");
      json meta = {{"id", std::string(variant_name(v))},
                   {"model", model_config_to_json(mc, v)},
                   {"epochs_trained", losses.size()},
                   {"seed", seed}};
      write_text(dir / "model_config.json", meta.dump(2) + "\n");
      write_stream(dir / "loss.csv", [&](std::ostream& o) { write_loss_csv(losses, o); });
      write_resolved(dir, config);
      out << "train: " << variant_name(v) << " " << losses.size() << " epochs on " << samples.size()
          << " sequences, final loss " << (losses.empty() ? 0.0 : losses.back()) << " -> " << dir.string() << "\n";
      return 0;
    }

    if (active == ev) {
      const TrainedModel m = load_model(checkpoint);
      auto samples = dataset_from(data_path, config, m.config.frames, m.config.joints, seed + 1);
      const json& noise = config.at("noise");
      const double sigma = as_double(noise, "sigma");
      if (sigma > 0) {
        NoiseSpec spec;
        spec.sigma = sigma;
        if (noise.at("joint").is_string()) spec.joint = noise.at("joint").get<std::string>();
        for (std::size_t i = 0; i < samples.size(); ++i) {
          spec.seed = noise.at("seed").get<std::uint64_t>() + i;
          samples[i] = add_noise(samples[i], spec);
        }
      }
      for (auto& s : samples) {
        if (s.frames > m.config.frames) s = center_crop(s, m.config.frames);
      }
      const MetricReport r = evaluate(m.params, m.config, m.variant, samples, flip_test);
      const fs::path dir = prepare_out(common);
      write_stream(dir / "metrics.csv", [&](std::ostream& o) { write_metric_csv(r, o); });
      const json report = {{"mpjpe", r.mpjpe}, {"pmpjpe", r.pmpjpe}, {"pck150", r.pck150},
                           {"auc", r.auc},     {"count", r.count},   {"flip_test", flip_test}};
      write_text(dir / "metrics.json", report.dump(2) + "\n");
      write_resolved(dir, config);
      out << "eval: " << m.id << " on " << r.count << " sequences, MPJPE " << r.mpjpe << " P-MPJPE " << r.pmpjpe
          << "\n";
      return 0;
    }

    if (active == bf) {
      const ModelConfig mc = model_config_from_json(config.at("model"));
      const Variant v = variant_from_json(config.at("model"));
      const FlopsBreakdown b = count_flops(mc, v);
      const fs::path dir = prepare_out(common);
      write_stream(dir / "flops.csv", [&](std::ostream& o) {
        o << "stage,flops\n";
        o << "joint_embed," << b.joint_embed << "\n";
        o << "spatial_msa," << b.spatial_msa << "\n";
        o << "spatial_ffn," << b.spatial_ffn << "\n";
        o << "freq_embed," << b.freq_embed << "\n";
        o << "fusion_msa," << b.fusion_msa << "\n";
        o << "ffn_time," << b.ffn_time << "\n";
        o << "ffn_freq," << b.ffn_freq << "\n";
        o << "head," << b.head << "\n";
        o << "total," << b.total() << "\n";
      });
      write_resolved(dir, config);
      out << "bench-flops: " << variant_name(v) << " F=" << mc.frames << " f=" << mc.central_frames
          << " n=" << mc.coeffs << " total " << b.total() << "\n";
      return 0;
    }

    if (active == br || active == bs) {
      std::vector<TrainedModel> models;
      for (const std::string& c : checkpoints) models.push_back(load_model(c));
      std::size_t frames = 0;
      for (const TrainedModel& m : models) {
        frames = std::max(frames, m.config.frames);
        if (m.config.joints != models.front().config.joints) throw ConfigError("checkpoints disagree on J");
      }
      const auto samples = dataset_from(data_path, config, frames, models.front().config.joints, seed + 1);
      const fs::path dir = prepare_out(common);
      if (active == br) {
        const std::vector<double> grid = sigmas.empty() ? default_sigma_grid() : parse_doubles(sigmas);
        const auto rows = robustness_sweep(models, samples, grid, config.at("noise").at("seed").get<std::uint64_t>(),
                                           flip_test);
        write_stream(dir / "robustness.csv", [&](std::ostream& o) { write_robustness_csv(rows, o); });
        write_resolved(dir, config);
        out << "bench-robustness: " << models.size() << " models x " << grid.size() << " sigmas -> "
            << (dir / "robustness.csv").string() << "\n";
      } else {
        const auto rows = speed_accuracy_sweep(models, samples, repeats, seed);
        write_stream(dir / "speed_accuracy.csv", [&](std::ostream& o) { write_speed_csv(rows, o); });
        write_resolved(dir, config);
        out << "bench-speed: " << rows.size() << " models -> " << (dir / "speed_accuracy.csv").string() << "\n";
      }
      return 0;
    }

    // dct-inspect
    const auto samples = load_samples(input);
    if (sample >= samples.size()) throw ConfigError("sample index out of range");
    const SkeletonSample& s = samples[sample];
    const std::size_t j = resolve_joint(s, joint);
    const std::vector<std::size_t> keeps = parse_sizes(keep);
    for (std::size_t k : keeps) {
      if (k == 0 || k > s.frames) throw ConfigError("--keep values must lie in [1, F]");
    }
    const auto traj = s.trajectory(j, axis == "x" ? 0 : 1);
    const fs::path dir = prepare_out(common);
    write_stream(dir / "dct_inspect.csv", [&](std::ostream& o) { write_dct_inspect_csv(traj, keeps, o); });
    write_resolved(dir, config);
    out << "dct-inspect: sample " << sample << " joint " << j << " axis " << axis << ", " << keeps.size()
        << " reconstructions -> " << (dir / "dct_inspect.csv").string() << "\n";
    return 0;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n\n" << active->help();
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace pfv2::cli
