#include "ctcvo/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "ctcvo/errors.hpp"

namespace ctcvo {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last || value.empty())
    throw ConfigError(key + ": '" + value + "' is not a valid number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError(key + ": '" + value + "' is not true/false");
}

std::string num(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

StageSpec parse_stage_spec(const std::string& key, const std::string& value) {
  std::vector<int> parts;
  std::stringstream s(value);
  for (std::string tok; std::getline(s, tok, ':');) parts.push_back(parse_number<int>(key, trim(tok)));
  if (parts.size() != 4) throw ConfigError(key + ": expected blocks:mid:out:stride, got '" + value + "'");
  return StageSpec{parts[0], parts[1], parts[2], parts[3]};
}

std::string stage_text(const StageSpec& s) {
  return std::to_string(s.blocks) + ":" + std::to_string(s.mid) + ":" + std::to_string(s.out) + ":" +
         std::to_string(s.stride);
}

const char* kStageKeys[4] = {"model.stage2", "model.stage3", "model.stage4", "model.stage5"};

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "model.preset",         "model.K",
      "model.image_height",   "model.image_width",
      "model.stem_channels",  "model.stage2",
      "model.stage3",         "model.stage4",
      "model.stage5",         "model.lstm_hidden",
      "model.lstm_layers_relative", "model.lstm_layers_global",
      "model.fc_width",       "model.seed",
      "train.epochs",         "train.batch_size",
      "train.lr0",            "train.adam_beta1",
      "train.adam_beta2",     "train.adam_eps",
      "train.total_iterations", "train.grad_clip",
      "train.beta_rot",       "train.lambda_global",
      "train.window_stride",  "train.calibration_frames",
      "train.scene_id",       "train.overwrite_scene",
      "train.pairs_from_relative", "train.seed",
      "data.source",          "data.root",
      "data.sequence",        "data.train_frames",
      "data.test_frames",     "eval.mode",
      "ablate.variants"};
  return keys;
}

FrameRange parse_range(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) throw ConfigError("frame range '" + s + "' must look like begin:end");
  FrameRange r;
  const std::string a = trim(s.substr(0, colon)), b = trim(s.substr(colon + 1));
  r.begin = a.empty() ? 0 : parse_number<long long>("frame range", a);
  r.end = b.empty() ? -1 : parse_number<long long>("frame range", b);
  if (r.begin < 0 || (r.end >= 0 && r.end <= r.begin)) throw ConfigError("frame range '" + s + "' is empty");
  return r;
}

std::string to_string(const FrameRange& r) {
  return std::to_string(r.begin) + ":" + (r.end < 0 ? std::string() : std::to_string(r.end));
}

std::vector<Variant> parse_variants(const std::string& s) {
  std::vector<Variant> out;
  std::stringstream in(s);
  for (std::string tok; std::getline(in, tok, ',');) {
    tok = trim(tok);
    const auto colon = tok.find(':');
    if (colon == std::string::npos) throw ConfigError("variant '" + tok + "' must look like mode:K");
    out.push_back(Variant{parse_mode(tok.substr(0, colon)), parse_number<int>("variant K", tok.substr(colon + 1))});
  }
  if (out.empty()) throw ConfigError("no ablation variants given");
  return out;
}

void RunConfig::set(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  ModelConfig& m = model;
  TrainConfig& t = train;
  if (key == "model.preset") {
    const ModelConfig keep = m;
    m = parse_preset(v) == Preset::Paper ? ModelConfig::paper() : ModelConfig::tiny();
    m.K = keep.K;
    m.seed = keep.seed;
  } else if (key == "model.K") {
    m.K = parse_number<int>(key, v);
  } else if (key == "model.image_height") {
    m.image_height = parse_number<int>(key, v);
  } else if (key == "model.image_width") {
    m.image_width = parse_number<int>(key, v);
  } else if (key == "model.stem_channels") {
    m.stem_channels = parse_number<int>(key, v);
  } else if (key == "model.lstm_hidden") {
    m.lstm_hidden = parse_number<int>(key, v);
  } else if (key == "model.lstm_layers_relative") {
    m.lstm_layers_relative = parse_number<int>(key, v);
  } else if (key == "model.lstm_layers_global") {
    m.lstm_layers_global = parse_number<int>(key, v);
  } else if (key == "model.fc_width") {
    m.fc_width = parse_number<int>(key, v);
  } else if (key == "model.seed") {
    m.seed = parse_number<std::uint64_t>(key, v);
  } else if (key == "train.epochs") {
    t.epochs = parse_number<int>(key, v);
  } else if (key == "train.batch_size") {
    t.batch_size = parse_number<int>(key, v);
  } else if (key == "train.lr0") {
    t.lr0 = parse_number<double>(key, v);
  } else if (key == "train.adam_beta1") {
    t.adam_beta1 = parse_number<double>(key, v);
  } else if (key == "train.adam_beta2") {
    t.adam_beta2 = parse_number<double>(key, v);
  } else if (key == "train.adam_eps") {
    t.adam_eps = parse_number<double>(key, v);
  } else if (key == "train.total_iterations") {
    t.total_iterations = parse_number<long long>(key, v);
  } else if (key == "train.grad_clip") {
    t.grad_clip = parse_number<double>(key, v);
  } else if (key == "train.beta_rot") {
    t.loss.beta_rot = parse_number<double>(key, v);
  } else if (key == "train.lambda_global") {
    t.loss.lambda_global = parse_number<double>(key, v);
  } else if (key == "train.window_stride") {
    t.window_stride = parse_number<int>(key, v);
  } else if (key == "train.calibration_frames") {
    t.calibration_frames = parse_number<int>(key, v);
  } else if (key == "train.scene_id") {
    t.scene_id = v;
  } else if (key == "train.overwrite_scene") {
    t.overwrite_scene = parse_bool(key, v);
  } else if (key == "train.pairs_from_relative") {
    t.pairs_from_relative = parse_bool(key, v);
  } else if (key == "train.seed") {
    t.seed = parse_number<std::uint64_t>(key, v);
  } else if (key == "data.source") {
    if (v != "kitti" && v != "sevenscenes") throw ConfigError("data.source must be kitti or sevenscenes");
    data_source = v;
  } else if (key == "data.root") {
    data_root = v;
  } else if (key == "data.sequence") {
    data_sequence = v;
  } else if (key == "data.train_frames") {
    train_frames = parse_range(v);
  } else if (key == "data.test_frames") {
    test_frames = parse_range(v);
  } else if (key == "eval.mode") {
    eval_mode = parse_mode(v);
  } else if (key == "ablate.variants") {
    ablate_variants = parse_variants(v);
  } else {
    for (int i = 0; i < 4; ++i)
      if (key == kStageKeys[i]) {
        m.backbone_channels[i] = parse_stage_spec(key, v);
        return;
      }
    throw ConfigError("unknown config key '" + key + "'");
  }
}

std::string RunConfig::to_text() const {
  std::ostringstream s;
  const ModelConfig& m = model;
  const TrainConfig& t = train;
  s << "model.preset=" << to_string(m.preset) << '\n'
    << "model.K=" << m.K << '\n'
    << "model.image_height=" << m.image_height << '\n'
    << "model.image_width=" << m.image_width << '\n'
    << "model.stem_channels=" << m.stem_channels << '\n';
  for (int i = 0; i < 4; ++i) s << kStageKeys[i] << "=" << stage_text(m.backbone_channels[i]) << '\n';
  s << "model.lstm_hidden=" << m.lstm_hidden << '\n'
    << "model.lstm_layers_relative=" << m.lstm_layers_relative << '\n'
    << "model.lstm_layers_global=" << m.lstm_layers_global << '\n'
    << "model.fc_width=" << m.fc_width << '\n'
    << "model.seed=" << m.seed << '\n'
    << "train.epochs=" << t.epochs << '\n'
    << "train.batch_size=" << t.batch_size << '\n'
    << "train.lr0=" << num(t.lr0) << '\n'
    << "train.adam_beta1=" << num(t.adam_beta1) << '\n'
    << "train.adam_beta2=" << num(t.adam_beta2) << '\n'
    << "train.adam_eps=" << num(t.adam_eps) << '\n'
    << "train.total_iterations=" << t.total_iterations << '\n'
    << "train.grad_clip=" << num(t.grad_clip) << '\n'
    << "train.beta_rot=" << num(t.loss.beta_rot) << '\n'
    << "train.lambda_global=" << num(t.loss.lambda_global) << '\n'
    << "train.window_stride=" << t.window_stride << '\n'
    << "train.calibration_frames=" << t.calibration_frames << '\n'
    << "train.scene_id=" << t.scene_id << '\n'
    << "train.overwrite_scene=" << (t.overwrite_scene ? "true" : "false") << '\n'
    << "train.pairs_from_relative=" << (t.pairs_from_relative ? "true" : "false") << '\n'
    << "train.seed=" << t.seed << '\n'
    << "data.source=" << data_source << '\n'
    << "data.root=" << data_root << '\n'
    << "data.sequence=" << data_sequence << '\n'
    << "data.train_frames=" << to_string(train_frames) << '\n'
    << "data.test_frames=" << to_string(test_frames) << '\n'
    << "eval.mode=" << to_string(eval_mode) << '\n'
    << "ablate.variants=";
  for (std::size_t i = 0; i < ablate_variants.size(); ++i)
    s << (i ? "," : "") << to_string(ablate_variants[i].mode) << ":" << ablate_variants[i].K;
  s << '\n';
  return s.str();
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(n) + ": expected key=value");
    base.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

RunConfig read_config_file(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw MissingFile(path);
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_config(buf.str(), std::move(base));
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

SequenceRecord load_sequence(const RunConfig& cfg, const FrameRange& range) {
  std::string root = cfg.data_root;
  if (root.empty()) {
    const char* env = std::getenv("CTCVO_DATA_ROOT");
    if (env) root = env;
  }
  if (root.empty()) throw ConfigError("no data root: set data.root or CTCVO_DATA_ROOT");
  if (cfg.data_sequence.empty()) throw ConfigError("data.sequence is not set");
  SequenceRecord seq;
  if (cfg.data_source == "kitti") {
    seq = load_kitti_sequence(root, cfg.data_sequence);
  } else {
    const auto slash = cfg.data_sequence.find('/');
    if (slash == std::string::npos) throw ConfigError("sevenscenes sequence must look like scene/NN");
    seq = load_sevenscenes_sequence(root, cfg.data_sequence.substr(0, slash), cfg.data_sequence.substr(slash + 1));
  }
  const long long n = static_cast<long long>(seq.size());
  const long long end = range.end < 0 ? n : range.end;
  if (range.begin >= end || end > n)
    throw SequenceTooShort(seq.id + " has " + std::to_string(n) + " frames; range " + to_string(range) +
                           " does not fit");
  if (range.begin == 0 && end == n) return seq;
  return slice(seq, static_cast<std::size_t>(range.begin), static_cast<std::size_t>(end));
}

}  // namespace ctcvo
